//! Reverse-mode gradient propagation.
//!
//! The forward pass builds the graph implicitly: each op output owns handles
//! to its parents plus a backward closure. [`GradTape::record`] linearizes the
//! graph reachable from a scalar loss into reverse topological order (children
//! before parents), and [`GradTape::replay`] walks that order once,
//! accumulating exactly one gradient per `requires_grad` leaf.
//!
//! The traversal order is derived from the graph structure alone (depth-first,
//! parents in slot order), so replay is deterministic and, with fixed inputs,
//! bit-identical across runs.

use std::cell::Cell;
use std::collections::HashMap;

use super::{BackwardCtx, Scalar, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` without recording gradient nodes. Useful for inference passes and
/// for producing detached samples during adversarial training.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|g| {
        let prev = g.replace(false);
        let out = f();
        g.set(prev);
        out
    })
}

/// Accumulated gradients keyed by leaf tensor identity.
pub struct GradientMap<T: Scalar> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn get(&self, leaf: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&leaf.id()).map(|v| v.as_slice())
    }

    pub fn contains(&self, leaf: &Tensor<T>) -> bool {
        self.grads.contains_key(&leaf.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into this map elementwise (used to combine per-sample
    /// gradients in a fixed order).
    pub fn accumulate(&mut self, other: &GradientMap<T>) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g.iter()) {
                        *a = *a + *b;
                    }
                }
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn empty() -> Self {
        GradientMap {
            grads: HashMap::new(),
        }
    }
}

/// Ordered record of the operations reachable from a loss, ready to replay.
pub struct GradTape<T: Scalar> {
    /// Reverse topological order: every tensor appears before its parents.
    order: Vec<Tensor<T>>,
}

impl<T: Scalar> GradTape<T> {
    /// Linearizes the graph below `loss`. The loss must be a single-element
    /// tensor; anything else is a contract violation.
    pub fn record(loss: &Tensor<T>) -> Result<Self> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        // Iterative depth-first post-order, parents visited in slot order.
        let mut post: Vec<Tensor<T>> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        // Stack entries: (tensor, next parent slot to visit).
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        if loss.on_tape() {
            visited.insert(loss.id());
            stack.push((loss.clone(), 0));
        }
        while let Some((t, slot)) = stack.pop() {
            let parents: &[Tensor<T>] = match &t.inner.node {
                Some(node) => &node.parents,
                None => &[],
            };
            if slot < parents.len() {
                let parent = parents[slot].clone();
                stack.push((t, slot + 1));
                if parent.on_tape() && !visited.contains(&parent.id()) {
                    visited.insert(parent.id());
                    stack.push((parent, 0));
                }
            } else {
                post.push(t);
            }
        }
        post.reverse();
        Ok(GradTape { order: post })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Propagates adjoints through the recorded order and returns the
    /// gradient of every `requires_grad` leaf. Consumes the tape.
    pub fn replay(self) -> GradientMap<T> {
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        let mut leaves: HashMap<u64, Vec<T>> = HashMap::new();
        if let Some(loss) = self.order.first() {
            grads.insert(loss.id(), vec![T::one()]);
        }
        for t in &self.order {
            let Some(grad) = grads.remove(&t.id()) else {
                continue;
            };
            if let Some(node) = &t.inner.node {
                let needs: Vec<bool> = node.parents.iter().map(|p| p.on_tape()).collect();
                let ctx = BackwardCtx {
                    out: t.data(),
                    out_shape: t.shape(),
                    grad: &grad,
                    needs: &needs,
                };
                let parent_grads = (node.backward)(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    debug_assert_eq!(pg.len(), parent.numel());
                    let acc = grads
                        .entry(parent.id())
                        .or_insert_with(|| vec![T::zero(); parent.numel()]);
                    for (a, b) in acc.iter_mut().zip(pg.iter()) {
                        *a = *a + *b;
                    }
                }
            }
            if t.requires_grad() {
                leaves.insert(t.id(), grad);
            }
        }
        GradientMap { grads: leaves }
    }
}

/// Records and replays in one call.
pub fn backward<T: Scalar>(loss: &Tensor<T>) -> Result<GradientMap<T>> {
    Ok(GradTape::record(loss)?.replay())
}
