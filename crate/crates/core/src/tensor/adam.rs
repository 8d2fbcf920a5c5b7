//! Adam optimizer with bias correction.
//!
//! Defaults follow the training setup used throughout this crate:
//! `beta1 = 0.0`, `beta2 = 0.9`. With `beta1 = 0` the first moment equals the
//! raw gradient at every step, so the update direction is the current
//! gradient scaled by the bias-corrected second-moment estimate.

use std::collections::HashMap;

use super::{GradientMap, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state: per-parameter moment buffers keyed by parameter name,
/// plus a step counter that advances once per [`Adam::step`].
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    state: HashMap<String, Moments<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: HashMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter in `params`, reading gradients
    /// from `grads`. Parameters without a gradient entry are treated as
    /// having a zero gradient (their moments still decay).
    pub fn step(&mut self, params: &mut dyn ParamSet<T>, grads: &GradientMap<T>) -> Result<()> {
        self.t += 1;
        let t = self.t;
        let cfg = self.cfg;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let eps = T::from_f64(cfg.eps);
        let lr = T::from_f64(cfg.lr);
        let mc = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
        let vc = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
        let mut failure: Option<Error> = None;
        params.for_each_param("", &mut |name, tensor| {
            if failure.is_some() {
                return;
            }
            let n = tensor.numel();
            let entry = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            if entry.m.len() != n {
                failure = Some(Error::Contract(format!(
                    "optimizer state for '{name}' holds {} elements, parameter has {n}",
                    entry.m.len()
                )));
                return;
            }
            let grad = grads.get(tensor);
            if let Some(g) = grad {
                if g.len() != n {
                    failure = Some(Error::Contract(format!(
                        "gradient for '{name}' has {} elements, parameter has {n}",
                        g.len()
                    )));
                    return;
                }
            }
            let mut data = tensor.data().to_vec();
            for i in 0..n {
                let g = grad.map_or(T::zero(), |g| g[i]);
                entry.m[i] = b1 * entry.m[i] + one_m_b1 * g;
                entry.v[i] = b2 * entry.v[i] + one_m_b2 * g * g;
                let m_hat = entry.m[i] / mc;
                let v_hat = entry.v[i] / vc;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            *tensor = Tensor::from_vec(tensor.dims(), data)
                .expect("adam: shape preserved")
                .with_grad_leaf(tensor.requires_grad());
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Moment buffers as named tensors for checkpointing, in visit order.
    pub fn export_state(&self, params: &mut dyn ParamSet<T>) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        params.for_each_param("", &mut |name, _| {
            if let Some(mv) = self.state.get(name) {
                out.push((format!("m.{name}"), mv.m.clone()));
                out.push((format!("v.{name}"), mv.v.clone()));
            }
        });
        out
    }

    pub fn import_state(&mut self, t: u64, entries: &[(String, Vec<T>)]) {
        self.t = t;
        for (name, data) in entries {
            if let Some(rest) = name.strip_prefix("m.") {
                self.state
                    .entry(rest.to_string())
                    .or_insert_with(|| Moments {
                        m: Vec::new(),
                        v: Vec::new(),
                    })
                    .m = data.clone();
            } else if let Some(rest) = name.strip_prefix("v.") {
                self.state
                    .entry(rest.to_string())
                    .or_insert_with(|| Moments {
                        m: Vec::new(),
                        v: Vec::new(),
                    })
                    .v = data.clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    struct OneParam {
        w: Tensor<f64>,
    }

    impl ParamSet<f64> for OneParam {
        fn for_each_param(
            &mut self,
            prefix: &str,
            f: &mut dyn FnMut(&str, &mut Tensor<f64>),
        ) {
            f(&crate::nn::join(prefix, "w"), &mut self.w);
        }
    }

    fn hyper() -> AdamConfig {
        AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    /// Textbook Adam recurrence, written independently of the implementation.
    fn reference_updates(g: f64, lr: f64, b2: f64, eps: f64, steps: usize) -> Vec<f64> {
        let mut theta = 0.0;
        let mut v = 0.0;
        let mut out = Vec::new();
        for t in 1..=steps {
            let m_hat = g; // beta1 = 0
            v = b2 * v + (1.0 - b2) * g * g;
            let v_hat = v / (1.0 - b2.powi(t as i32));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model = OneParam {
            w: Tensor::leaf(&[3], vec![1.0, -2.0, 0.5]).unwrap(),
        };
        let mut adam = Adam::new(hyper());
        adam.step(&mut model, &GradientMap::empty()).unwrap();
        assert_eq!(model.w.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn single_step_matches_reference() {
        let mut model = OneParam {
            w: Tensor::leaf(&[1], vec![0.0]).unwrap(),
        };
        let mut adam = Adam::new(hyper());
        // d(w)/dw = 1 everywhere
        let grads = backward(&model.w.sum_all()).unwrap();
        adam.step(&mut model, &grads).unwrap();
        let expect = reference_updates(1.0, 0.1, 0.9, 1e-8, 1);
        assert!((model.w.data()[0] - expect[0]).abs() < 1e-15);
    }

    #[test]
    fn two_identical_steps_match_recurrence() {
        let mut model = OneParam {
            w: Tensor::leaf(&[1], vec![0.0]).unwrap(),
        };
        let mut adam = Adam::new(hyper());
        let expect = reference_updates(1.0, 0.1, 0.9, 1e-8, 2);
        for step in 0..2 {
            let probe = model.w.sum_all();
            let grads = backward(&probe).unwrap();
            adam.step(&mut model, &grads).unwrap();
            // the parameter moved, but d(sum)/dw stays 1, matching the
            // constant-gradient recurrence
            let drift = expect[step] - model.w.data()[0];
            assert!(drift.abs() < 1e-12, "step {step}: {drift}");
        }
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_drift_is_a_contract_error() {
        let mut model = OneParam {
            w: Tensor::leaf(&[2], vec![0.0, 0.0]).unwrap(),
        };
        let mut adam = Adam::new(hyper());
        let grads = backward(&model.w.sum_all()).unwrap();
        adam.step(&mut model, &grads).unwrap();
        // swap in a parameter of a different size under the same name
        model.w = Tensor::leaf(&[3], vec![0.0; 3]).unwrap();
        let grads = backward(&model.w.sum_all()).unwrap();
        assert!(matches!(
            adam.step(&mut model, &grads),
            Err(crate::error::Error::Contract(_))
        ));
    }
}
