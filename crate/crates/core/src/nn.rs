//! Small neural-net building blocks shared by the encoders and the generator.
//!
//! Every module implements [`ParamSet`], which walks its trainable tensors in
//! a fixed order under stable dotted names. The optimizer, the checkpoint
//! format and the freeze/thaw helpers are all built on that single traversal.

use crate::error::Result;
use crate::prng::Prng;
use crate::tensor::{scaled_dot_attention, Scalar, Tensor};

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named traversal over a module's parameters, depth-first in field order.
pub trait ParamSet<T: Scalar> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

/// Marks every parameter as not requiring gradients. Frozen tensors never
/// appear in a gradient map, so they can never be updated.
pub fn freeze<T: Scalar>(params: &mut dyn ParamSet<T>) {
    params.for_each_param("", &mut |_, t| {
        if t.requires_grad() {
            *t = t.with_grad_leaf(false);
        }
    });
}

pub fn count_params<T: Scalar>(params: &mut dyn ParamSet<T>) -> usize {
    let mut n = 0;
    params.for_each_param("", &mut |_, t| n += t.numel());
    n
}

/// Collects `(name, values)` snapshots; used by tests to assert that frozen
/// modules never move.
pub fn snapshot_params<T: Scalar>(params: &mut dyn ParamSet<T>) -> Vec<(String, Vec<T>)> {
    let mut out = Vec::new();
    params.for_each_param("", &mut |name, t| {
        out.push((name.to_string(), t.data().to_vec()));
    });
    out
}

// ---------------------------------------------------------------------------

/// Fully connected layer; weight is `[in, out]` so inputs multiply from the
/// left.
pub struct Linear<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(fan_in: usize, fan_out: usize, prng: &mut Prng) -> Self {
        let std = (1.0 / fan_in as f64).sqrt();
        Linear {
            w: Tensor::randn(&[fan_in, fan_out], std, prng).with_grad_leaf(true),
            b: Tensor::zeros(&[fan_out]).with_grad_leaf(true),
        }
    }

    /// Accepts `[l, in]` or a bare `[in]` vector.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (x2, squeeze) = if x.rank() == 1 {
            (x.reshape(&[1, x.numel()])?, true)
        } else {
            (x.clone(), false)
        };
        let y = x2.matmul(&self.w)?.add(&self.b)?;
        if squeeze {
            let n = y.numel();
            y.reshape(&[n])
        } else {
            Ok(y)
        }
    }
}

impl<T: Scalar> ParamSet<T> for Linear<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Two-layer perceptron with ReLU in between.
pub struct Mlp<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(fan_in: usize, hidden: usize, fan_out: usize, prng: &mut Prng) -> Self {
        Mlp {
            fc1: Linear::new(fan_in, hidden, prng),
            fc2: Linear::new(hidden, fan_out, prng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.relu())
    }
}

impl<T: Scalar> ParamSet<T> for Mlp<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc1.for_each_param(&join(prefix, "fc1"), f);
        self.fc2.for_each_param(&join(prefix, "fc2"), f);
    }
}

/// 2-D convolution layer over a single `[c,h,w]` feature map.
pub struct Conv2dLayer<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        prng: &mut Prng,
    ) -> Self {
        // Kaiming init for ReLU stacks
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        Conv2dLayer {
            w: Tensor::randn(&[out_ch, in_ch, k, k], std, prng).with_grad_leaf(true),
            b: Tensor::zeros(&[out_ch]).with_grad_leaf(true),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let y = x
            .reshape(&[1, c, h, w])?
            .conv2d(&self.w, self.stride, self.pad)?;
        let (o, ho, wo) = (y.dims()[1], y.dims()[2], y.dims()[3]);
        let bias = self.b.reshape(&[o, 1, 1])?;
        y.reshape(&[o, ho, wo])?.add(&bias)
    }
}

impl<T: Scalar> ParamSet<T> for Conv2dLayer<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

pub struct LayerNorm<T: Scalar> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gain: Tensor::ones(&[d]).with_grad_leaf(true),
            bias: Tensor::zeros(&[d]).with_grad_leaf(true),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

impl<T: Scalar> ParamSet<T> for LayerNorm<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "g"), &mut self.gain);
        f(&join(prefix, "b"), &mut self.bias);
    }
}

/// Single-head self-attention over a `[l, d]` token sequence.
pub struct SelfAttention<T: Scalar> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new(d: usize, prng: &mut Prng) -> Self {
        SelfAttention {
            wq: Linear::new(d, d, prng),
            wk: Linear::new(d, d, prng),
            wv: Linear::new(d, d, prng),
            wo: Linear::new(d, d, prng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;
        self.wo.forward(&scaled_dot_attention(&q, &k, &v, mask)?)
    }
}

impl<T: Scalar> ParamSet<T> for SelfAttention<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.wq.for_each_param(&join(prefix, "wq"), f);
        self.wk.for_each_param(&join(prefix, "wk"), f);
        self.wv.for_each_param(&join(prefix, "wv"), f);
        self.wo.for_each_param(&join(prefix, "wo"), f);
    }
}

/// Pre-norm transformer block: attention and MLP sublayers with residual
/// connections.
pub struct TransformerBlock<T: Scalar> {
    pub ln1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(d: usize, mlp_hidden: usize, prng: &mut Prng) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(d),
            attn: SelfAttention::new(d, prng),
            ln2: LayerNorm::new(d),
            mlp: Mlp::new(d, mlp_hidden, d, prng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let x = x.add(&self.attn.forward(&self.ln1.forward(x)?, mask)?)?;
        x.add(&self.mlp.forward(&self.ln2.forward(&x)?)?)
    }
}

impl<T: Scalar> ParamSet<T> for TransformerBlock<T> {
    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.ln1.for_each_param(&join(prefix, "ln1"), f);
        self.attn.for_each_param(&join(prefix, "attn"), f);
        self.ln2.for_each_param(&join(prefix, "ln2"), f);
        self.mlp.for_each_param(&join(prefix, "mlp"), f);
    }
}

/// Divides by the L2 norm (with a small floor to stay differentiable at 0).
pub fn unit_normalize<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let norm = x.square().sum_all().add_scalar(1e-12).sqrt();
    x.div(&norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes() {
        let mut p = Prng::seed_from(1);
        let lin = Linear::<f64>::new(4, 3, &mut p);
        let x = Tensor::ones(&[2, 4]);
        assert_eq!(lin.forward(&x).unwrap().dims(), &[2, 3]);
        let v = Tensor::ones(&[4]);
        assert_eq!(lin.forward(&v).unwrap().dims(), &[3]);
    }

    #[test]
    fn param_names_are_stable() {
        let mut p = Prng::seed_from(1);
        let mut block = TransformerBlock::<f64>::new(8, 16, &mut p);
        let mut names = Vec::new();
        block.for_each_param("blk", &mut |n, _| names.push(n.to_string()));
        assert_eq!(names[0], "blk.ln1.g");
        assert!(names.contains(&"blk.attn.wq.w".to_string()));
        assert!(names.contains(&"blk.mlp.fc2.b".to_string()));
        assert_eq!(names.len(), 16);
    }

    #[test]
    fn freeze_clears_requires_grad() {
        let mut p = Prng::seed_from(2);
        let mut lin = Linear::<f64>::new(3, 3, &mut p);
        assert!(lin.w.requires_grad());
        freeze(&mut lin);
        assert!(!lin.w.requires_grad());
        assert!(!lin.b.requires_grad());
    }

    #[test]
    fn unit_normalize_norm_is_one() {
        let mut p = Prng::seed_from(3);
        let x = Tensor::<f64>::randn(&[16], 2.0, &mut p);
        let y = unit_normalize(&x).unwrap();
        let n: f64 = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}
