//! Text-conditioned prompt prediction: an FC layer lifts per-token text
//! features to transformer width, one self-attention layer mixes them, and an
//! output projection emits a fixed number of prompt tokens for the vision
//! transformer.

use crate::counters;
use crate::error::{Error, Result};
use crate::nn::{join, Linear, ParamSet, SelfAttention};
use crate::prng::Prng;
use crate::tensor::{Scalar, Tensor};

pub struct PromptPredictor<T: Scalar> {
    pub fc: Linear<T>,
    pub attn: SelfAttention<T>,
    pub out: Linear<T>,
    pub prompt_count: usize,
    pub vit_dim: usize,
}

impl<T: Scalar> PromptPredictor<T> {
    pub fn new(d_t: usize, vit_dim: usize, prompt_count: usize, prng: &mut Prng) -> Self {
        assert!(prompt_count >= 1, "prompt_count must be at least 1");
        PromptPredictor {
            fc: Linear::new(d_t, vit_dim, prng),
            attn: SelfAttention::new(vit_dim, prng),
            out: Linear::new(vit_dim, prompt_count * vit_dim, prng),
            prompt_count,
            vit_dim,
        }
    }

    /// `[l, d_t]` token features (with `valid_len` meaningful rows) to
    /// `[prompt_count, vit_dim]` prompt tokens.
    pub fn forward(&self, token_features: &Tensor<T>, valid_len: usize) -> Result<Tensor<T>> {
        counters::bump(counters::names::PROMPT_PREDICT);
        if token_features.rank() != 2 {
            return Err(Error::dim(
                "predict_prompts",
                format!("expected [l, d_t], got {}", token_features.shape()),
            ));
        }
        let l = token_features.dims()[0];
        if valid_len == 0 || valid_len > l {
            return Err(Error::dim(
                "predict_prompts",
                format!("valid_len {valid_len} out of sequence length {l}"),
            ));
        }
        let h = self.fc.forward(token_features)?.relu();
        // hide padding keys, as in the text encoder
        let mut mask_data = vec![T::zero(); l * l];
        for q in 0..l {
            for k in valid_len..l {
                mask_data[q * l + k] = T::from_f64(-1e9);
            }
        }
        let mask = Tensor::from_vec(&[l, l], mask_data)?;
        let h = h.add(&self.attn.forward(&h, Some(&mask))?)?;
        let pooled = h.narrow(0, 0, valid_len)?.mean_axis(0)?;
        self.out
            .forward(&pooled)?
            .reshape(&[self.prompt_count, self.vit_dim])
    }
}

impl<T: Scalar> ParamSet<T> for PromptPredictor<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc.for_each_param(&join(prefix, "fc"), f);
        self.attn.for_each_param(&join(prefix, "attn"), f);
        self.out.for_each_param(&join(prefix, "out"), f);
    }
}
