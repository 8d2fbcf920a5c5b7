//! Miniature vision transformer over a fixed 64x64 input with 8x8 patches.
//! The 8x8 patch-token grid is what the refinement stages re-inject, and the
//! class token (projected to the joint dimension) is the image embedding used
//! for contrastive training, similarity scoring and the discriminator.
//!
//! Prompt tokens, when given, are inserted between the class token and the
//! patch tokens; they carry no positional embedding.

use crate::counters;
use crate::error::{Error, Result};
use crate::nn::{join, Linear, ParamSet, TransformerBlock};
use crate::prng::Prng;
use crate::tensor::{Scalar, Tensor};

pub const VIT_INPUT: usize = 64;
pub const VIT_PATCH: usize = 8;
pub const VIT_GRID: usize = VIT_INPUT / VIT_PATCH;
const N_PATCHES: usize = VIT_GRID * VIT_GRID;

pub struct MiniVit<T: Scalar> {
    pub patch_proj: Linear<T>,
    pub class_token: Tensor<T>,
    /// Positional embeddings for class + patch tokens only.
    pub positional: Tensor<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub out_proj: Linear<T>,
    pub dim: usize,
    pub out_dim: usize,
}

pub struct VitOutput<T: Scalar> {
    /// `[(1 + prompts + patches), dim]` token features after the final block.
    pub tokens: Tensor<T>,
    /// `[out_dim]` class-token projection (not normalized).
    pub pooled: Tensor<T>,
    pub n_prompts: usize,
}

impl<T: Scalar> VitOutput<T> {
    /// Patch-token features as a `[dim, 8, 8]` grid.
    pub fn patch_grid(&self) -> Result<Tensor<T>> {
        let total = self.tokens.dims()[0];
        let dim = self.tokens.dims()[1];
        self.tokens
            .narrow(0, total - N_PATCHES, N_PATCHES)?
            .transpose2d()?
            .reshape(&[dim, VIT_GRID, VIT_GRID])
    }
}

impl<T: Scalar> MiniVit<T> {
    pub fn new(dim: usize, out_dim: usize, depth: usize, prng: &mut Prng) -> Self {
        MiniVit {
            patch_proj: Linear::new(3 * VIT_PATCH * VIT_PATCH, dim, prng),
            class_token: Tensor::randn(&[1, dim], 0.02, prng).with_grad_leaf(true),
            positional: Tensor::randn(&[1 + N_PATCHES, dim], 0.01, prng).with_grad_leaf(true),
            blocks: (0..depth)
                .map(|_| TransformerBlock::new(dim, 2 * dim, prng))
                .collect(),
            out_proj: Linear::new(dim, out_dim, prng),
            dim,
            out_dim,
        }
    }

    /// Runs the transformer over `[3, 64, 64]` with optional `[k, dim]`
    /// prompt tokens.
    pub fn forward(&self, image: &Tensor<T>, prompts: Option<&Tensor<T>>) -> Result<VitOutput<T>> {
        counters::bump(counters::names::VIT_FORWARD);
        if image.dims() != [3, VIT_INPUT, VIT_INPUT] {
            return Err(Error::dim(
                "vit_forward",
                format!("expected 3x{VIT_INPUT}x{VIT_INPUT}, got {}", image.shape()),
            ));
        }
        let n_prompts = match prompts {
            Some(p) => {
                if p.rank() != 2 || p.dims()[1] != self.dim {
                    return Err(Error::dim(
                        "vit_forward",
                        format!("prompts {} do not match width {}", p.shape(), self.dim),
                    ));
                }
                p.dims()[0]
            }
            None => 0,
        };
        let patches = self
            .patch_proj
            .forward(&image.unfold_patches(VIT_PATCH)?)?
            .add(&self.positional.narrow(0, 1, N_PATCHES)?)?;
        let class = self.class_token.add(&self.positional.narrow(0, 0, 1)?)?;
        let sequence = match prompts {
            Some(p) => Tensor::concat(&[class, p.clone(), patches], 0)?,
            None => Tensor::concat(&[class, patches], 0)?,
        };
        let mut x = sequence;
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let pooled_in = x.narrow(0, 0, 1)?.reshape(&[self.dim])?;
        let pooled = self.out_proj.forward(&pooled_in)?;
        Ok(VitOutput {
            tokens: x,
            pooled,
            n_prompts,
        })
    }
}

impl<T: Scalar> ParamSet<T> for MiniVit<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.patch_proj.for_each_param(&join(prefix, "patch_proj"), f);
        f(&join(prefix, "class_token"), &mut self.class_token);
        f(&join(prefix, "positional"), &mut self.positional);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_param(&join(prefix, &format!("block{i}")), f);
        }
        self.out_proj.for_each_param(&join(prefix, "out_proj"), f);
    }
}
