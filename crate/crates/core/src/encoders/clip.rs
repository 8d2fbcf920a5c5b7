//! Paired text/image encoders with symmetric contrastive training over
//! cosine-similarity logits, the desk-scale stand-in for a pretrained CLIP.

use super::text::{TextEncoder, TextFeatures};
use super::vit::{MiniVit, VIT_INPUT};
use super::vocab::{tokenize, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{self, join, ParamSet};
use crate::prng::Prng;
use crate::tensor::{backward, Adam, Scalar, Tensor};

pub struct ClipEncoders<T: Scalar> {
    pub vocab: Vocabulary,
    pub text: TextEncoder<T>,
    pub vit: MiniVit<T>,
    pub temperature: f64,
    pub max_len: usize,
}

impl<T: Scalar> ClipEncoders<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vocab: Vocabulary,
        d_t: usize,
        d_vit: usize,
        text_blocks: usize,
        vit_blocks: usize,
        max_len: usize,
        temperature: f64,
        prng: &mut Prng,
    ) -> Self {
        let text = TextEncoder::new(vocab.len(), d_t, max_len, text_blocks, prng);
        let vit = MiniVit::new(d_vit, d_t, vit_blocks, prng);
        ClipEncoders {
            vocab,
            text,
            vit,
            temperature,
            max_len,
        }
    }

    pub fn tokenize(&self, caption: &str) -> Result<TokenSequence> {
        tokenize(caption, &self.vocab, self.max_len)
    }

    pub fn encode_caption(&self, caption: &str) -> Result<TextFeatures<T>> {
        self.text.encode(&self.tokenize(caption)?)
    }

    /// Brings an HR image tensor down to the transformer input size with
    /// average pooling (differentiable, so generated images can be scored).
    pub fn prepare_vit_input(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        if image.rank() != 3 || image.dims()[0] != 3 {
            return Err(Error::dim(
                "prepare_vit_input",
                format!("expected [3,h,w], got {}", image.shape()),
            ));
        }
        let h = image.dims()[1];
        if h == VIT_INPUT && image.dims()[2] == VIT_INPUT {
            return Ok(image.clone());
        }
        if h % VIT_INPUT != 0 || image.dims()[2] != h {
            return Err(Error::Config(format!(
                "image {} cannot be pooled to {VIT_INPUT}x{VIT_INPUT}",
                image.shape()
            )));
        }
        image.avg_pool2d(h / VIT_INPUT)
    }

    /// Unit-normalized joint-space embedding of an HR image.
    pub fn embed_image(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = self.vit.forward(&self.prepare_vit_input(image)?, None)?.pooled;
        nn::unit_normalize(&pooled)
    }

    /// Unit-normalized joint-space embedding of a caption.
    pub fn embed_text(&self, tokens: &TokenSequence) -> Result<Tensor<T>> {
        nn::unit_normalize(&self.text.encode(tokens)?.pooled)
    }

    /// One optimizer step of symmetric contrastive training on image/token
    /// pairs. Returns the loss value.
    pub fn pretrain_step(
        &mut self,
        batch: &[(Tensor<T>, TokenSequence)],
        adam: &mut Adam<T>,
    ) -> Result<f64> {
        if batch.len() < 2 {
            return Err(Error::Input(format!(
                "contrastive training needs at least 2 pairs, got {}",
                batch.len()
            )));
        }
        let img_embs: Vec<Tensor<T>> = batch
            .iter()
            .map(|(img, _)| self.embed_image(img))
            .collect::<Result<_>>()?;
        let txt_embs: Vec<Tensor<T>> = batch
            .iter()
            .map(|(_, tok)| self.embed_text(tok))
            .collect::<Result<_>>()?;
        let images = Tensor::stack_rows(&img_embs)?;
        let texts = Tensor::stack_rows(&txt_embs)?;
        let loss = contrastive_loss(&texts, &images, self.temperature)?;
        let value = Scalar::to_f64(loss.item());
        let grads = backward(&loss)?;
        adam.step(self, &grads)?;
        Ok(value)
    }

    /// Within-batch text-to-image top-1 retrieval accuracy.
    pub fn retrieval_top1(&self, pairs: &[(Tensor<T>, TokenSequence)]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Input("retrieval on an empty batch".into()));
        }
        let hits = crate::tensor::no_grad(|| -> Result<usize> {
            let img_embs: Vec<Tensor<T>> = pairs
                .iter()
                .map(|(img, _)| self.embed_image(img))
                .collect::<Result<_>>()?;
            let mut hits = 0usize;
            for (i, (_, tok)) in pairs.iter().enumerate() {
                let t = self.embed_text(tok)?;
                let mut best = (0usize, f64::NEG_INFINITY);
                for (j, e) in img_embs.iter().enumerate() {
                    let sim: f64 = t
                        .data()
                        .iter()
                        .zip(e.data())
                        .map(|(&a, &b)| Scalar::to_f64(a) * Scalar::to_f64(b))
                        .sum();
                    if sim > best.1 {
                        best = (j, sim);
                    }
                }
                if best.0 == i {
                    hits += 1;
                }
            }
            Ok(hits)
        })?;
        Ok(hits as f64 / pairs.len() as f64)
    }
}

impl<T: Scalar> ParamSet<T> for ClipEncoders<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.text.for_each_param(&join(prefix, "text"), f);
        self.vit.for_each_param(&join(prefix, "vit"), f);
    }
}

/// Symmetric cross-entropy over cosine-similarity logits: rows are captions,
/// columns are images, matching pairs on the diagonal. Inputs must be
/// unit-normalized `[n, d]` embeddings.
pub fn contrastive_loss<T: Scalar>(
    texts: &Tensor<T>,
    images: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    if texts.dims() != images.dims() || texts.rank() != 2 {
        return Err(Error::dim(
            "contrastive_loss",
            format!("embedding shapes differ: {} vs {}", texts.shape(), images.shape()),
        ));
    }
    let n = texts.dims()[0];
    if n < 2 {
        return Err(Error::Input("contrastive loss needs at least 2 pairs".into()));
    }
    let logits = texts
        .matmul(&images.transpose2d()?)?
        .scale(1.0 / temperature);
    let mut eye_data = vec![T::zero(); n * n];
    for i in 0..n {
        eye_data[i * n + i] = T::one();
    }
    let eye = Tensor::from_vec(&[n, n], eye_data)?;
    let diag_nll = |l: &Tensor<T>| -> Result<Tensor<T>> {
        let picked = l.softmax(1)?.mul(&eye)?.sum_axis(1)?;
        Ok(picked.ln().mean_all().neg())
    };
    let t2i = diag_nll(&logits)?;
    let i2t = diag_nll(&logits.transpose2d()?)?;
    Ok(t2i.add(&i2t)?.scale(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::vocab::build_vocab;

    #[test]
    fn aligned_diagonal_loss_near_zero() {
        // one-hot basis embeddings give exactly sim 1 on the diagonal and 0
        // elsewhere
        let n = 16;
        let d = 64;
        let mut data = vec![0.0f64; n * d];
        for i in 0..n {
            data[i * d + i] = 1.0;
        }
        let e = Tensor::from_vec(&[n, d], data).unwrap();
        let loss = contrastive_loss(&e, &e, 0.07).unwrap().item();
        let expect = -((1.0f64 / 0.07).exp() / ((1.0f64 / 0.07).exp() + 15.0)).ln();
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
        assert!(loss < 1e-4);
    }

    #[test]
    fn uniform_similarities_loss_is_ln_n() {
        // identical embeddings make every similarity equal
        let n = 16;
        let d = 8;
        let mut row = vec![0.0f64; d];
        row[0] = 1.0;
        let data: Vec<f64> = (0..n).flat_map(|_| row.clone()).collect();
        let e = Tensor::from_vec(&[n, d], data).unwrap();
        let loss = contrastive_loss(&e, &e, 0.07).unwrap().item();
        assert!((loss - (n as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn batch_of_one_rejected() {
        let e = Tensor::<f64>::ones(&[1, 4]);
        assert!(matches!(
            contrastive_loss(&e, &e, 0.07),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn pretrain_step_needs_two_pairs() {
        let vocab = build_vocab(&["a red square".to_string()]).unwrap();
        let mut prng = Prng::seed_from(1);
        let mut clip = ClipEncoders::<f32>::new(vocab, 8, 16, 1, 1, 6, 0.07, &mut prng);
        let img = Tensor::zeros(&[3, VIT_INPUT, VIT_INPUT]);
        let tok = clip.tokenize("a red square").unwrap();
        let mut adam = Adam::new(Default::default());
        assert!(matches!(
            clip.pretrain_step(&[(img, tok)], &mut adam),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let vocab = build_vocab(&["a red square on a blue background".to_string()]).unwrap();
        let mut prng = Prng::seed_from(2);
        let clip = ClipEncoders::<f64>::new(vocab, 8, 16, 1, 1, 8, 0.07, &mut prng);
        let mut ip = Prng::seed_from(3);
        let img = Tensor::randn(&[3, VIT_INPUT, VIT_INPUT], 0.3, &mut ip);
        let a = clip.embed_image(&img).unwrap();
        let b = clip.embed_image(&img).unwrap();
        assert_eq!(a.data(), b.data());
        let norm: f64 = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn pooling_prepares_larger_inputs() {
        let vocab = build_vocab(&["a".to_string()]).unwrap();
        let mut prng = Prng::seed_from(4);
        let clip = ClipEncoders::<f32>::new(vocab, 8, 16, 1, 1, 4, 0.07, &mut prng);
        let img = Tensor::zeros(&[3, 128, 128]);
        let prepped = clip.prepare_vit_input(&img).unwrap();
        assert_eq!(prepped.dims(), &[3, 64, 64]);
        assert!(clip.prepare_vit_input(&Tensor::zeros(&[3, 48, 48])).is_err());
    }
}
