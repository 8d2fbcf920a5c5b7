//! Finite-difference gradient verification.
//!
//! The oracle only ever calls forward passes: it perturbs each input element
//! by a step proportional to the value scale and compares the central
//! difference against the analytic gradient from [`crate::tensor::backward`].
//! Run it at `f64`; at `f32` the difference quotient itself is too noisy.

use crate::error::{Error, Result};
use crate::tensor::{backward, Tensor};

/// Outcome of a gradient check: the worst elementwise relative error seen.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor so near-zero gradients compare on absolute
/// terms.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Verifies the analytic gradient of `f` with respect to every entry of every
/// leaf in `inputs`, using central differences with step `1e-4` of the value
/// scale. `f` must be deterministic and must consume the provided leaves.
pub fn check_fn<F>(f: F, inputs: &[Tensor<f64>], tol: f64) -> Result<CheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for t in inputs {
        if !t.requires_grad() {
            return Err(Error::Contract(
                "gradcheck inputs must be requires_grad leaves".into(),
            ));
        }
    }
    let loss = f(inputs)?;
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradcheck probe must be scalar, got {}",
            loss.shape()
        )));
    }
    let grads = backward(&loss)?;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (slot, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(input) {
            Some(g) => g.to_vec(),
            None => vec![0.0; input.numel()],
        };
        let base = input.data().to_vec();
        for i in 0..base.len() {
            let h = 1e-4 * base[i].abs().max(1.0);
            let eval = |v: f64| -> Result<f64> {
                let mut data = base.clone();
                data[i] = v;
                let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
                probe[slot] = Tensor::leaf(input.dims(), data)?;
                Ok(f(&probe)?.item())
            };
            let numeric = (eval(base[i] + h)? - eval(base[i] - h)?) / (2.0 * h);
            let e = rel_err(analytic[i], numeric);
            if e > max_rel {
                max_rel = e;
            }
            checked += 1;
            if e > tol {
                return Err(Error::Contract(format!(
                    "gradient mismatch at input {slot} element {i}: \
                     analytic {} vs numeric {numeric} (rel err {e:.3e} > {tol:.1e})",
                    analytic[i]
                )));
            }
        }
    }
    Ok(CheckReport {
        max_rel_err: max_rel,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;
    use crate::tensor::scaled_dot_attention;

    const OP_TOL: f64 = 1e-5;

    fn leaf(dims: &[usize], prng: &mut Prng) -> Tensor<f64> {
        Tensor::randn(dims, 1.0, prng).with_grad_leaf(true)
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // oracle sanity: the value depends on x through a detached path, so
        // the analytic gradient claims 0 while the difference quotient sees
        // relu'(x) = 1 on the positive entry
        let must_fail = check_fn(
            |ins| {
                let through_detach = ins[0].detach().relu().sum_all();
                through_detach.add(&ins[0].sum_all().scale(0.0))
            },
            &[Tensor::leaf(&[3], vec![-1.0, -2.0, 3.0]).unwrap()],
            1e-5,
        );
        assert!(must_fail.is_err());
    }

    #[test]
    fn elementwise_ops() {
        let mut p = Prng::seed_from(1);
        let x = leaf(&[2, 3], &mut p);
        check_fn(|i| Ok(i[0].relu().sum_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].sigmoid().sum_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].exp().sum_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].square().sum_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].abs().sum_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].neg().scale(0.7).sum_all()), &[x], OP_TOL).unwrap();
        // positive-domain ops
        let pos = Tensor::leaf(&[4], vec![0.5, 1.5, 2.5, 0.9]).unwrap();
        check_fn(|i| Ok(i[0].ln().sum_all()), &[pos.clone()], OP_TOL).unwrap();
        check_fn(|i| Ok(i[0].sqrt().sum_all()), &[pos], OP_TOL).unwrap();
    }

    #[test]
    fn binary_ops_with_broadcast() {
        let mut p = Prng::seed_from(2);
        let a = leaf(&[2, 3], &mut p);
        let b = leaf(&[2, 3], &mut p);
        check_fn(
            |i| i[0].mul(&i[1]).map(|t| t.sum_all()),
            &[a.clone(), b.clone()],
            OP_TOL,
        )
        .unwrap();
        let bias = leaf(&[3], &mut p);
        check_fn(
            |i| i[0].add(&i[1]).map(|t| t.square().sum_all()),
            &[a.clone(), bias],
            OP_TOL,
        )
        .unwrap();
        let denom = Tensor::leaf(&[2, 3], vec![1.5, 2.0, -1.2, 0.7, 3.0, -2.5]).unwrap();
        check_fn(
            |i| i[0].div(&i[1]).map(|t| t.sum_all()),
            &[a, denom],
            OP_TOL,
        )
        .unwrap();
    }

    #[test]
    fn matmul_and_transpose() {
        let mut p = Prng::seed_from(3);
        let a = leaf(&[3, 4], &mut p);
        let b = leaf(&[4, 2], &mut p);
        check_fn(
            |i| Ok(i[0].matmul(&i[1])?.square().sum_all()),
            &[a.clone(), b],
            OP_TOL,
        )
        .unwrap();
        check_fn(
            |i| Ok(i[0].transpose2d()?.square().sum_all()),
            &[a],
            OP_TOL,
        )
        .unwrap();
    }

    #[test]
    fn reductions_softmax_layer_norm() {
        let mut p = Prng::seed_from(4);
        let x = leaf(&[3, 4], &mut p);
        check_fn(|i| Ok(i[0].mean_all()), &[x.clone()], OP_TOL).unwrap();
        check_fn(
            |i| Ok(i[0].sum_axis(1)?.square().sum_all()),
            &[x.clone()],
            OP_TOL,
        )
        .unwrap();
        check_fn(
            |i| Ok(i[0].softmax(1)?.square().sum_all()),
            &[x.clone()],
            OP_TOL,
        )
        .unwrap();
        let g = leaf(&[4], &mut p);
        let b = leaf(&[4], &mut p);
        check_fn(
            |i| Ok(i[0].layer_norm(&i[1], &i[2], 1e-5)?.square().sum_all()),
            &[x, g, b],
            OP_TOL,
        )
        .unwrap();
    }

    #[test]
    fn conv_pool_shuffle_patches() {
        let mut p = Prng::seed_from(5);
        let x = leaf(&[1, 2, 5, 5], &mut p);
        let k = leaf(&[3, 2, 3, 3], &mut p);
        check_fn(
            |i| Ok(i[0].conv2d(&i[1], 1, 1)?.square().sum_all()),
            &[x.clone(), k.clone()],
            OP_TOL,
        )
        .unwrap();
        check_fn(
            |i| Ok(i[0].conv2d(&i[1], 2, 1)?.square().sum_all()),
            &[x, k],
            OP_TOL,
        )
        .unwrap();
        let x = leaf(&[1, 8, 3, 3], &mut p);
        check_fn(
            |i| Ok(i[0].pixel_shuffle(2)?.square().sum_all()),
            &[x],
            OP_TOL,
        )
        .unwrap();
        let x = leaf(&[2, 4, 4], &mut p);
        check_fn(
            |i| Ok(i[0].avg_pool2d(2)?.square().sum_all()),
            &[x.clone()],
            OP_TOL,
        )
        .unwrap();
        check_fn(
            |i| Ok(i[0].unfold_patches(2)?.square().sum_all()),
            &[x],
            OP_TOL,
        )
        .unwrap();
    }

    #[test]
    fn gather_narrow_concat() {
        let mut p = Prng::seed_from(6);
        let table = leaf(&[5, 3], &mut p);
        check_fn(
            |i| Ok(i[0].gather_rows(&[0, 2, 2, 4])?.square().sum_all()),
            &[table],
            OP_TOL,
        )
        .unwrap();
        let x = leaf(&[4, 3], &mut p);
        let y = leaf(&[2, 3], &mut p);
        check_fn(
            |i| {
                let cat = Tensor::concat(&[i[0].clone(), i[1].clone()], 0)?;
                Ok(cat.narrow(0, 2, 3)?.square().sum_all())
            },
            &[x, y],
            OP_TOL,
        )
        .unwrap();
    }

    #[test]
    fn attention_composition() {
        let mut p = Prng::seed_from(7);
        let q = leaf(&[3, 4], &mut p);
        let k = leaf(&[5, 4], &mut p);
        let v = leaf(&[5, 4], &mut p);
        check_fn(
            |i| Ok(scaled_dot_attention(&i[0], &i[1], &i[2], None)?.square().sum_all()),
            &[q, k, v],
            OP_TOL,
        )
        .unwrap();
    }
}
