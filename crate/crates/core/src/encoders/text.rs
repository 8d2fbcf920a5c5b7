//! Transformer text encoder. Produces a pooled caption vector (features at
//! the EOS position, CLIP-style) plus the per-token feature sequence consumed
//! by the prompt predictor.

use super::vocab::TokenSequence;
use crate::counters;
use crate::error::Result;
use crate::nn::{join, Linear, ParamSet, TransformerBlock};
use crate::prng::Prng;
use crate::tensor::{Scalar, Tensor};

pub struct TextFeatures<T: Scalar> {
    /// `[d_t]` caption embedding taken at the EOS position.
    pub pooled: Tensor<T>,
    /// `[max_len, d_t]` per-token features.
    pub seq: Tensor<T>,
    /// Number of meaningful positions (words + EOS); the rest is padding.
    pub valid_len: usize,
}

pub struct TextEncoder<T: Scalar> {
    pub embedding: Tensor<T>,
    pub positional: Tensor<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub out_proj: Linear<T>,
    pub max_len: usize,
    pub dim: usize,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn new(
        vocab_size: usize,
        dim: usize,
        max_len: usize,
        depth: usize,
        prng: &mut Prng,
    ) -> Self {
        TextEncoder {
            embedding: Tensor::randn(&[vocab_size, dim], 0.02, prng).with_grad_leaf(true),
            positional: Tensor::randn(&[max_len, dim], 0.01, prng).with_grad_leaf(true),
            blocks: (0..depth)
                .map(|_| TransformerBlock::new(dim, 2 * dim, prng))
                .collect(),
            out_proj: Linear::new(dim, dim, prng),
            max_len,
            dim,
        }
    }

    /// Additive attention mask hiding every key position after the EOS.
    fn padding_mask(&self, valid_len: usize) -> Tensor<T> {
        let l = self.max_len;
        let mut data = vec![T::zero(); l * l];
        for q in 0..l {
            for k in valid_len..l {
                data[q * l + k] = T::from_f64(-1e9);
            }
        }
        Tensor::from_vec(&[l, l], data).expect("mask shape")
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<TextFeatures<T>> {
        counters::bump(counters::names::TEXT_ENCODE);
        debug_assert_eq!(tokens.ids.len(), self.max_len);
        let mut x = self
            .embedding
            .gather_rows(&tokens.ids)?
            .add(&self.positional)?;
        let mask = self.padding_mask(tokens.valid_len());
        for block in &self.blocks {
            x = block.forward(&x, Some(&mask))?;
        }
        let pooled_in = x.narrow(0, tokens.eos_pos, 1)?.reshape(&[self.dim])?;
        let pooled = self.out_proj.forward(&pooled_in)?;
        Ok(TextFeatures {
            pooled,
            seq: x,
            valid_len: tokens.valid_len(),
        })
    }
}

impl<T: Scalar> ParamSet<T> for TextEncoder<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "embedding"), &mut self.embedding);
        f(&join(prefix, "positional"), &mut self.positional);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_param(&join(prefix, &format!("block{i}")), f);
        }
        self.out_proj.for_each_param(&join(prefix, "out_proj"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::vocab::{build_vocab, tokenize, PAD_ID};

    fn encoder(seed: u64) -> (TextEncoder<f64>, crate::encoders::Vocabulary) {
        let vocab = build_vocab(&["a red square on a blue background".to_string()]).unwrap();
        let mut prng = Prng::seed_from(seed);
        (TextEncoder::new(vocab.len(), 16, 8, 2, &mut prng), vocab)
    }

    #[test]
    fn pooled_shape_and_determinism() {
        let (enc, vocab) = encoder(1);
        let t = tokenize("a red square", &vocab, 8).unwrap();
        let a = enc.encode(&t).unwrap();
        let b = enc.encode(&t).unwrap();
        assert_eq!(a.pooled.dims(), &[16]);
        assert_eq!(a.seq.dims(), &[8, 16]);
        assert_eq!(a.pooled.data(), b.pooled.data());
    }

    #[test]
    fn pad_region_does_not_affect_features() {
        let (enc, vocab) = encoder(2);
        let t = tokenize("a red square", &vocab, 8).unwrap();
        let base = enc.encode(&t).unwrap();
        // corrupt the PAD region with arbitrary ids
        let mut corrupted = t.clone();
        for i in corrupted.eos_pos + 1..corrupted.ids.len() {
            assert_eq!(corrupted.ids[i], PAD_ID);
            corrupted.ids[i] = 3 + (i % 3);
        }
        let got = enc.encode(&corrupted).unwrap();
        for (a, b) in base.pooled.data().iter().zip(got.pooled.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // the valid token features are untouched as well
        let valid = t.valid_len() * 16;
        for (a, b) in base.seq.data()[..valid].iter().zip(&got.seq.data()[..valid]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn different_captions_different_features() {
        let (enc, vocab) = encoder(3);
        let a = enc
            .encode(&tokenize("a red square", &vocab, 8).unwrap())
            .unwrap();
        let b = enc
            .encode(&tokenize("a blue square", &vocab, 8).unwrap())
            .unwrap();
        let diff: f64 = a
            .pooled
            .data()
            .iter()
            .zip(b.pooled.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1e-6);
    }
}
