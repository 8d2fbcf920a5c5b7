//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major buffers behind an `Arc`; cloning a tensor
//! is a handle copy. Every operation is pure: it allocates a fresh output and,
//! when any input is connected to the gradient tape, records the parents plus
//! a backward closure on the output node. [`autograd::backward`] replays those
//! closures in reverse topological order and returns one accumulated gradient
//! per `requires_grad` leaf.
//!
//! Training runs in `f32`; gradient verification instantiates the same code
//! at `f64`, which is what the [`crate::gradcheck`] oracle relies on.

mod adam;
mod autograd;
mod linalg;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use autograd::{backward, no_grad, GradTape, GradientMap};
pub use ops::scaled_dot_attention;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::prng::Prng;

/// Element type for tensors: `f32` for training, `f64` for verification.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Tensor extents, row-major. The empty shape is a scalar.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Extent along `axis`.
    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "scalar");
        }
        let joined = self
            .0
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        write!(f, "{joined}")
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape::new(dims)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Gradients produced by a backward closure, one slot per parent
/// (`None` when that parent does not need a gradient).
pub(crate) type ParentGrads<T> = Vec<Option<Vec<T>>>;

pub(crate) struct BackwardCtx<'a, T: Scalar> {
    /// Forward output values of the node being differentiated.
    pub out: &'a [T],
    pub out_shape: &'a Shape,
    /// Upstream gradient with respect to the node output.
    pub grad: &'a [T],
    /// Which parent slots need a gradient.
    pub needs: &'a [bool],
}

pub(crate) struct Node<T: Scalar> {
    pub parents: Vec<Tensor<T>>,
    pub backward: Box<dyn Fn(&BackwardCtx<'_, T>) -> ParentGrads<T> + Send + Sync>,
    #[allow(dead_code)]
    pub op: &'static str,
}

pub(crate) struct Inner<T: Scalar> {
    pub id: u64,
    pub shape: Shape,
    pub data: Vec<T>,
    pub grad_leaf: bool,
    pub node: Option<Node<T>>,
}

/// Immutable dense tensor handle. Cheap to clone.
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={}, grad={})",
            self.inner.id,
            self.inner.shape,
            self.on_tape()
        )
    }
}

fn validate_shape(shape: &Shape, len: usize) -> Result<()> {
    if shape.dims().iter().any(|&d| d == 0) {
        return Err(Error::dim(
            "tensor",
            format!("zero extent in shape {shape}"),
        ));
    }
    if shape.numel() != len {
        return Err(Error::dim(
            "tensor",
            format!("shape {shape} holds {} elements, buffer has {len}", shape.numel()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// Constant (non-leaf, non-tracked) tensor.
    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims);
        validate_shape(&shape, data.len())?;
        Ok(Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                grad_leaf: false,
                node: None,
            }),
        })
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn leaf(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Tensor::from_vec(dims, data)?;
        Ok(t.with_grad_leaf(true))
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape: Shape::scalar(),
                data: vec![v],
                grad_leaf: false,
                node: None,
            }),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, vec![T::zero(); n]).expect("zeros: shape/buffer agree")
    }

    pub fn ones(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, vec![T::one(); n]).expect("ones: shape/buffer agree")
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, vec![v; n]).expect("full: shape/buffer agree")
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(dims: &[usize], std: f64, prng: &mut Prng) -> Self {
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(prng.normal() * std))
            .collect();
        Tensor::from_vec(dims, data).expect("randn: shape/buffer agree")
    }

    /// Returns a copy of this tensor with the leaf flag set as given.
    pub fn with_grad_leaf(&self, requires_grad: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                grad_leaf: requires_grad,
                node: None,
            }),
        }
    }

    /// Cuts the tensor out of the gradient graph.
    pub fn detach(&self) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                grad_leaf: false,
                node: None,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &Shape {
        &self.inner.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.inner.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.grad_leaf
    }

    /// Whether this tensor is connected to the gradient tape.
    pub fn on_tape(&self) -> bool {
        self.inner.grad_leaf || self.inner.node.is_some()
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|&v| Scalar::to_f64(v)).collect()
    }

    /// Precision-converting copy (drops graph connectivity, keeps leaf flag).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .inner
            .data
            .iter()
            .map(|&v| U::from_f64(Scalar::to_f64(v)))
            .collect();
        let t = Tensor::<U>::from_vec(self.dims(), data).expect("cast keeps shape");
        t.with_grad_leaf(self.inner.grad_leaf)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    /// Internal: wrap op output, recording the node only when some parent is
    /// tracked and gradient recording is enabled.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        op: &'static str,
        backward: Box<dyn Fn(&BackwardCtx<'_, T>) -> ParentGrads<T> + Send + Sync>,
    ) -> Self {
        debug_assert_eq!(shape.numel(), data.len(), "{op}: shape/buffer mismatch");
        let tracked =
            autograd::grad_enabled() && parents.iter().any(|p| p.on_tape());
        let node = if tracked {
            Some(Node {
                parents,
                backward,
                op,
            })
        } else {
            None
        };
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                grad_leaf: false,
                node,
            }),
        }
    }
}
