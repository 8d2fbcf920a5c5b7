//! Differentiable tensor operations.
//!
//! Each op validates shapes, computes the forward value, and registers a
//! backward closure when an input is connected to the tape. Backward closures
//! return one optional gradient buffer per parent; `None` skips parents that
//! do not need gradients (frozen weights), which also skips their compute.

use super::linalg::{matmul_nn, matmul_nt, matmul_tn};
use super::{BackwardCtx, ParentGrads, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// broadcasting helpers

fn broadcast_shape(op: &'static str, a: &Shape, b: &Shape) -> Result<Shape> {
    let ra = a.rank();
    let rb = b.rank();
    let rank = ra.max(rb);
    let mut dims = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - ra { 1 } else { a.dims()[i - (rank - ra)] };
        let db = if i < rank - rb { 1 } else { b.dims()[i - (rank - rb)] };
        dims[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::dim(op, format!("cannot broadcast {a} with {b}")));
        };
    }
    Ok(Shape::new(&dims))
}

/// Strides of `from` viewed as `to`, with zero stride on broadcast axes.
fn broadcast_strides(from: &Shape, to: &Shape) -> Vec<usize> {
    let offset = to.rank() - from.rank();
    let native = from.strides();
    let mut out = vec![0usize; to.rank()];
    for i in 0..from.rank() {
        out[offset + i] = if from.dims()[i] == 1 { 0 } else { native[i] };
    }
    out
}

/// Visits every element of `dims` in row-major order, handing `f` the two
/// source offsets produced by the given (possibly zero) strides.
fn for_each_pair(dims: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    if dims.is_empty() {
        f(0, 0);
        return;
    }
    let rank = dims.len();
    let mut idx = vec![0usize; rank];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    loop {
        f(off_a, off_b);
        // odometer increment, last axis fastest
        let mut axis = rank;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            off_a += sa[axis];
            off_b += sb[axis];
            if idx[axis] < dims[axis] {
                break;
            }
            off_a -= sa[axis] * dims[axis];
            off_b -= sb[axis] * dims[axis];
            idx[axis] = 0;
        }
    }
}

/// Sums an output-shaped gradient back down to a broadcast parent's shape.
fn reduce_to_shape<T: Scalar>(grad: &[T], out: &Shape, parent: &Shape) -> Vec<T> {
    if out == parent {
        return grad.to_vec();
    }
    let strides = broadcast_strides(parent, out);
    let zero_strides = vec![0usize; out.rank()];
    let mut acc = vec![T::zero(); parent.numel()];
    let mut i = 0usize;
    for_each_pair(out.dims(), &strides, &zero_strides, |p_off, _| {
        acc[p_off] = acc[p_off] + grad[i];
        i += 1;
    });
    acc
}

// ---------------------------------------------------------------------------
// elementwise

impl<T: Scalar> Tensor<T> {
    fn unary(
        &self,
        op: &'static str,
        fwd: impl Fn(T) -> T,
        // dx given (x, y, g)
        bwd: impl Fn(T, T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| fwd(x)).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().clone(),
            data,
            vec![self.clone()],
            op,
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let g = x
                    .data()
                    .iter()
                    .zip(ctx.out.iter())
                    .zip(ctx.grad.iter())
                    .map(|((&xv, &yv), &gv)| bwd(xv, yv, gv))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _, g| -g)
    }

    /// max(x, 0); the subgradient at exactly 0 is 0.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _, g| if x > T::zero() { g } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            "sigmoid",
            |x| {
                // split on sign for overflow safety
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y, g| g * y * (T::one() - y),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y, g| g * y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _, g| g / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(
            "sqrt",
            |x| x.sqrt(),
            |_, y, g| g / (y + y),
        )
    }

    /// |x|; the subgradient at exactly 0 is 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _, g| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.unary("scale", move |x| x * c, move |_, _, g| g * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        self.unary("add_scalar", move |x| x + c, |_, _, g| g)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _, g| g * (x + x))
    }

    fn binary(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        fwd: impl Fn(T, T) -> T,
        // (a, b, g) -> (da, db)
        bwd: impl Fn(T, T, T) -> (T, T) + Send + Sync + 'static,
    ) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(op, self.shape(), rhs.shape())?;
        let sa = broadcast_strides(self.shape(), &out_shape);
        let sb = broadcast_strides(rhs.shape(), &out_shape);
        let a_data = self.data();
        let b_data = rhs.data();
        let mut data = Vec::with_capacity(out_shape.numel());
        if self.shape() == rhs.shape() {
            for (&a, &b) in a_data.iter().zip(b_data.iter()) {
                data.push(fwd(a, b));
            }
        } else {
            for_each_pair(out_shape.dims(), &sa, &sb, |ia, ib| {
                data.push(fwd(a_data[ia], b_data[ib]));
            });
        }
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            out_shape.clone(),
            data,
            vec![self.clone(), rhs.clone()],
            op,
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                let mut ga = if ctx.needs[0] {
                    Some(vec![T::zero(); ctx.out.len()])
                } else {
                    None
                };
                let mut gb = if ctx.needs[1] {
                    Some(vec![T::zero(); ctx.out.len()])
                } else {
                    None
                };
                let sa = broadcast_strides(a.shape(), ctx.out_shape);
                let sb = broadcast_strides(b.shape(), ctx.out_shape);
                let mut i = 0usize;
                for_each_pair(ctx.out_shape.dims(), &sa, &sb, |ia, ib| {
                    let (da, db) = bwd(a.data()[ia], b.data()[ib], ctx.grad[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = db;
                    }
                    i += 1;
                });
                vec![
                    ga.map(|g| reduce_to_shape(&g, ctx.out_shape, a.shape())),
                    gb.map(|g| reduce_to_shape(&g, ctx.out_shape, b.shape())),
                ]
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, "div", |a, b| a / b, |a, b, g| (g / b, -g * a / (b * b)))
    }
}

// ---------------------------------------------------------------------------
// matmul and shape ops

impl<T: Scalar> Tensor<T> {
    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("expected rank-2 operands, got {} and {}", self.shape(), rhs.shape()),
            ));
        }
        let (m, k) = (self.dims()[0], self.dims()[1]);
        let (k2, n) = (rhs.dims()[0], rhs.dims()[1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: lhs {} vs rhs {}", self.shape(), rhs.shape()),
            ));
        }
        let mut data = vec![T::zero(); m * n];
        matmul_nn(self.data(), rhs.data(), &mut data, m, k, n);
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            Shape::new(&[m, n]),
            data,
            vec![self.clone(), rhs.clone()],
            "matmul",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                let ga = ctx.needs[0].then(|| {
                    let mut g = vec![T::zero(); m * k];
                    matmul_nt(ctx.grad, b.data(), &mut g, m, n, k);
                    g
                });
                let gb = ctx.needs[1].then(|| {
                    let mut g = vec![T::zero(); k * n];
                    matmul_tn(a.data(), ctx.grad, &mut g, k, m, n);
                    g
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::dim(
                "transpose",
                format!("expected rank-2 operand, got {}", self.shape()),
            ));
        }
        let (m, n) = (self.dims()[0], self.dims()[1]);
        let src = self.data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(Tensor::from_op(
            Shape::new(&[n, m]),
            data,
            vec![self.clone()],
            "transpose",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        g[i * n + j] = ctx.grad[j * m + i];
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(dims);
        if shape.numel() != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {} as {}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            shape,
            self.data().to_vec(),
            vec![self.clone()],
            "reshape",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                vec![Some(ctx.grad.to_vec())]
            }),
        ))
    }

    /// Slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() || start + len > self.dims()[axis] || len == 0 {
            return Err(Error::dim(
                "narrow",
                format!(
                    "slice [{start}..{}) on axis {axis} of {}",
                    start + len,
                    self.shape()
                ),
            ));
        }
        let dims = self.dims();
        let outer: usize = dims[..axis].iter().product();
        let mid = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let mut out_dims = dims.to_vec();
        out_dims[axis] = len;
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let full = self.numel();
        Ok(Tensor::from_op(
            Shape::new(&out_dims),
            data,
            vec![self.clone()],
            "narrow",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); full];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let srcb = o * len * inner;
                    g[dst..dst + len * inner]
                        .copy_from_slice(&ctx.grad[srcb..srcb + len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates tensors along `axis`. All other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim("concat", format!("axis {axis} out of rank {rank}")));
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.rank() != rank {
                return Err(Error::dim(
                    "concat",
                    format!("rank mismatch: {} vs {}", first.shape(), p.shape()),
                ));
            }
            for d in 0..rank {
                if d != axis && p.dims()[d] != first.dims()[d] {
                    return Err(Error::dim(
                        "concat",
                        format!("extent mismatch: {} vs {}", first.shape(), p.shape()),
                    ));
                }
            }
            axis_total += p.dims()[axis];
        }
        let mut out_dims = first.dims().to_vec();
        out_dims[axis] = axis_total;
        let outer: usize = first.dims()[..axis].iter().product();
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let lp = p.dims()[axis];
                let src = p.data();
                data.extend_from_slice(&src[o * lp * inner..(o + 1) * lp * inner]);
            }
        }
        let part_lens: Vec<usize> = parts.iter().map(|p| p.dims()[axis]).collect();
        Ok(Tensor::from_op(
            Shape::new(&out_dims),
            data,
            parts.to_vec(),
            "concat",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                let mut grads: Vec<Option<Vec<T>>> = part_lens
                    .iter()
                    .zip(ctx.needs.iter())
                    .map(|(&lp, &need)| need.then(|| vec![T::zero(); outer * lp * inner]))
                    .collect();
                let mut src = 0usize;
                for o in 0..outer {
                    for (pi, &lp) in part_lens.iter().enumerate() {
                        let span = lp * inner;
                        if let Some(g) = grads[pi].as_mut() {
                            g[o * span..(o + 1) * span]
                                .copy_from_slice(&ctx.grad[src..src + span]);
                        }
                        src += span;
                    }
                }
                grads
            }),
        ))
    }

    /// Stacks same-shaped tensors as rows of a new leading axis.
    pub fn stack_rows(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let reshaped: Vec<Tensor<T>> = parts
            .iter()
            .map(|p| {
                let mut dims = vec![1usize];
                dims.extend_from_slice(p.dims());
                p.reshape(&dims)
            })
            .collect::<Result<_>>()?;
        Tensor::concat(&reshaped, 0)
    }

    /// Embedding lookup: rows of `self` (`[v, d]`) selected by `ids`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::dim(
                "gather_rows",
                format!("expected rank-2 table, got {}", self.shape()),
            ));
        }
        let (v, d) = (self.dims()[0], self.dims()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim(
                "gather_rows",
                format!("row {bad} out of table {}", self.shape()),
            ));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(
            Shape::new(&[ids.len(), d]),
            data,
            vec![self.clone()],
            "gather_rows",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); v * d];
                for (r, &i) in ids.iter().enumerate() {
                    let dst = &mut g[i * d..(i + 1) * d];
                    let src = &ctx.grad[r * d..(r + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src.iter()) {
                        *a = *a + *b;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// reductions and normalizations

impl<T: Scalar> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data() {
            acc = acc + v;
        }
        let n = self.numel();
        Tensor::from_op(
            Shape::scalar(),
            vec![acc],
            vec![self.clone()],
            "sum_all",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                vec![Some(vec![ctx.grad[0]; n])]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    fn axis_split(&self, op: &'static str, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::dim(
                op,
                format!("axis {axis} out of rank {} ({})", self.rank(), self.shape()),
            ));
        }
        let dims = self.dims();
        let outer: usize = dims[..axis].iter().product();
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        Ok((outer, len, inner))
    }

    /// Sums along `axis`, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = self.axis_split("sum_axis", axis)?;
        let src = self.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let base = (o * len + i) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d = *d + s;
                }
            }
        }
        let mut out_dims = self.dims().to_vec();
        out_dims.remove(axis);
        Ok(Tensor::from_op(
            Shape::new(&out_dims),
            data,
            vec![self.clone()],
            "sum_axis",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for i in 0..len {
                        let base = (o * len + i) * inner;
                        g[base..base + inner]
                            .copy_from_slice(&ctx.grad[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let len = self
            .dims()
            .get(axis)
            .copied()
            .ok_or_else(|| Error::dim("mean_axis", format!("axis {axis} of {}", self.shape())))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Max-shifted softmax along `axis`; outputs are positive and sum to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let (outer, len, inner) = self.axis_split("softmax", axis)?;
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let mut m = src[at(0)];
                for i in 1..len {
                    if src[at(i)] > m {
                        m = src[at(i)];
                    }
                }
                let mut denom = T::zero();
                for i in 0..len {
                    let e = (src[at(i)] - m).exp();
                    data[at(i)] = e;
                    denom = denom + e;
                }
                for i in 0..len {
                    data[at(i)] = data[at(i)] / denom;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().clone(),
            data,
            vec![self.clone()],
            "softmax",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                // dx = y * (g - sum(g * y)) per lane
                let mut g = vec![T::zero(); ctx.out.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let mut dot = T::zero();
                        for i in 0..len {
                            dot = dot + ctx.grad[at(i)] * ctx.out[at(i)];
                        }
                        for i in 0..len {
                            g[at(i)] = ctx.out[at(i)] * (ctx.grad[at(i)] - dot);
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let rank = self.rank();
        if rank == 0 {
            return Err(Error::dim("layer_norm", "scalar input".to_string()));
        }
        let d = self.dims()[rank - 1];
        if gain.dims() != [d] || bias.dims() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain {} / bias {} do not match last axis of {}",
                    gain.shape(),
                    bias.shape(),
                    self.shape()
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let lanes = self.numel() / d;
        let eps = T::from_f64(eps);
        let src = self.data();
        let gd = gain.data();
        let bd = bias.data();
        let mut data = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); lanes];
        let mut x_hat = vec![T::zero(); self.numel()];
        let inv_d = T::from_f64(1.0 / d as f64);
        for l in 0..lanes {
            let lane = &src[l * d..(l + 1) * d];
            let mut mean = T::zero();
            for &v in lane {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = T::zero();
            for &v in lane {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std[l] = is;
            for i in 0..d {
                let xh = (lane[i] - mean) * is;
                x_hat[l * d + i] = xh;
                data[l * d + i] = xh * gd[i] + bd[i];
            }
        }
        let gain_t = gain.clone();
        Ok(Tensor::from_op(
            self.shape().clone(),
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            "layer_norm",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                let gd = gain_t.data();
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); lanes * d]);
                let mut gg = ctx.needs[1].then(|| vec![T::zero(); d]);
                let mut gb = ctx.needs[2].then(|| vec![T::zero(); d]);
                for l in 0..lanes {
                    let go = &ctx.grad[l * d..(l + 1) * d];
                    let xh = &x_hat[l * d..(l + 1) * d];
                    if let Some(gg) = gg.as_mut() {
                        for i in 0..d {
                            gg[i] = gg[i] + go[i] * xh[i];
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for i in 0..d {
                            gb[i] = gb[i] + go[i];
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut mean_dy = T::zero();
                        let mut mean_dy_xh = T::zero();
                        for i in 0..d {
                            let dy = go[i] * gd[i];
                            mean_dy = mean_dy + dy;
                            mean_dy_xh = mean_dy_xh + dy * xh[i];
                        }
                        mean_dy = mean_dy * inv_d;
                        mean_dy_xh = mean_dy_xh * inv_d;
                        for i in 0..d {
                            let dy = go[i] * gd[i];
                            gx[l * d + i] = (dy - mean_dy - xh[i] * mean_dy_xh) * inv_std[l];
                        }
                    }
                }
                vec![gx, gg, gb]
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// spatial ops

/// Output extent of a convolution axis, or an error when it is not integral.
fn conv_extent(op: &'static str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || (padded - kernel) % stride != 0 {
        return Err(Error::Config(format!(
            "{op}: extent {input} with kernel {kernel}, stride {stride}, pad {pad} \
             gives a non-integral output size"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); c * kh * kw * ho * wo];
    let span = ho * wo;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * span..(row + 1) * span];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * wo + ox] = input[src_base + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let span = ho * wo;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * span..(row + 1) * span];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let di = dst_base + ix as usize;
                        out[di] = out[di] + src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of `[n,c,h,w]` with kernels `[o,c,kh,kw]` under zero
    /// padding. Differentiable with respect to both input and kernel.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 || kernel.rank() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected [n,c,h,w] and [o,c,kh,kw], got {} and {}", self.shape(), kernel.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be >= 1".into()));
        }
        let (n, c, h, w) = (self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]);
        let (o, kc, kh, kw) = (kernel.dims()[0], kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]);
        if kc != c {
            return Err(Error::dim(
                "conv2d",
                format!("channel mismatch: input {} vs kernel {}", self.shape(), kernel.shape()),
            ));
        }
        let ho = conv_extent("conv2d", h, kh, stride, pad)?;
        let wo = conv_extent("conv2d", w, kw, stride, pad)?;
        let ck2 = c * kh * kw;
        let span = ho * wo;
        let mut data = vec![T::zero(); n * o * span];
        for ni in 0..n {
            let cols = im2col(
                &self.data()[ni * c * h * w..(ni + 1) * c * h * w],
                c, h, w, kh, kw, stride, pad, ho, wo,
            );
            matmul_nn(
                kernel.data(),
                &cols,
                &mut data[ni * o * span..(ni + 1) * o * span],
                o, ck2, span,
            );
        }
        let x = self.clone();
        let k = kernel.clone();
        Ok(Tensor::from_op(
            Shape::new(&[n, o, ho, wo]),
            data,
            vec![self.clone(), kernel.clone()],
            "conv2d",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                let mut gx = ctx.needs[0].then(|| vec![T::zero(); n * c * h * w]);
                let mut gk = ctx.needs[1].then(|| vec![T::zero(); o * ck2]);
                for ni in 0..n {
                    let g_out = &ctx.grad[ni * o * span..(ni + 1) * o * span];
                    if let Some(gk) = gk.as_mut() {
                        // columns are recomputed rather than cached: cheap
                        // relative to the matmuls and keeps graph memory flat
                        let cols = im2col(
                            &x.data()[ni * c * h * w..(ni + 1) * c * h * w],
                            c, h, w, kh, kw, stride, pad, ho, wo,
                        );
                        matmul_nt(g_out, &cols, gk, o, span, ck2);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut g_cols = vec![T::zero(); ck2 * span];
                        matmul_tn(k.data(), g_out, &mut g_cols, ck2, o, span);
                        col2im(
                            &g_cols,
                            c, h, w, kh, kw, stride, pad, ho, wo,
                            &mut gx[ni * c * h * w..(ni + 1) * c * h * w],
                        );
                    }
                }
                vec![gx, gk]
            }),
        ))
    }

    /// Rearranges channel blocks into spatial sub-pixels:
    /// `[n, c*r^2, h, w] -> [n, c, r*h, r*w]` with
    /// `out[n,c,r*y+dy,r*x+dx] = in[n, c*r^2 + dy*r + dx, y, x]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(
                "pixel_shuffle",
                format!("expected [n,c,h,w], got {}", self.shape()),
            ));
        }
        if r == 0 {
            return Err(Error::Config("pixel_shuffle: factor must be >= 1".into()));
        }
        let (n, cr2, h, w) = (self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]);
        if cr2 % (r * r) != 0 {
            return Err(Error::Config(format!(
                "pixel_shuffle: {cr2} channels not divisible by r^2 = {}",
                r * r
            )));
        }
        let c = cr2 / (r * r);
        let (oh, ow) = (h * r, w * r);
        let src = self.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                for dy in 0..r {
                    for dx in 0..r {
                        let in_ch = ci * r * r + dy * r + dx;
                        for y in 0..h {
                            let src_base = ((ni * cr2 + in_ch) * h + y) * w;
                            let dst_base = ((ni * c + ci) * oh + (r * y + dy)) * ow + dx;
                            for x in 0..w {
                                data[dst_base + r * x] = src[src_base + x];
                            }
                        }
                    }
                }
            }
        }
        let in_len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(&[n, c, oh, ow]),
            data,
            vec![self.clone()],
            "pixel_shuffle",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); in_len];
                for ni in 0..n {
                    for ci in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                let in_ch = ci * r * r + dy * r + dx;
                                for y in 0..h {
                                    let src_base = ((ni * cr2 + in_ch) * h + y) * w;
                                    let dst_base =
                                        ((ni * c + ci) * oh + (r * y + dy)) * ow + dx;
                                    for x in 0..w {
                                        g[src_base + x] = ctx.grad[dst_base + r * x];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Exact inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(
                "pixel_unshuffle",
                format!("expected [n,c,h,w], got {}", self.shape()),
            ));
        }
        if r == 0 {
            return Err(Error::Config("pixel_unshuffle: factor must be >= 1".into()));
        }
        let (n, c, oh, ow) = (self.dims()[0], self.dims()[1], self.dims()[2], self.dims()[3]);
        if oh % r != 0 || ow % r != 0 {
            return Err(Error::Config(format!(
                "pixel_unshuffle: spatial {oh}x{ow} not divisible by {r}"
            )));
        }
        let (h, w) = (oh / r, ow / r);
        let cr2 = c * r * r;
        let src = self.data();
        let mut data = vec![T::zero(); n * cr2 * h * w];
        for ni in 0..n {
            for ci in 0..c {
                for dy in 0..r {
                    for dx in 0..r {
                        let out_ch = ci * r * r + dy * r + dx;
                        for y in 0..h {
                            let dst_base = ((ni * cr2 + out_ch) * h + y) * w;
                            let src_base = ((ni * c + ci) * oh + (r * y + dy)) * ow + dx;
                            for x in 0..w {
                                data[dst_base + x] = src[src_base + r * x];
                            }
                        }
                    }
                }
            }
        }
        let in_len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(&[n, cr2, h, w]),
            data,
            vec![self.clone()],
            "pixel_unshuffle",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); in_len];
                for ni in 0..n {
                    for ci in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                let out_ch = ci * r * r + dy * r + dx;
                                for y in 0..h {
                                    let dst_base = ((ni * cr2 + out_ch) * h + y) * w;
                                    let src_base =
                                        ((ni * c + ci) * oh + (r * y + dy)) * ow + dx;
                                    for x in 0..w {
                                        g[src_base + r * x] = ctx.grad[dst_base + x];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Non-overlapping average pooling on `[c,h,w]` by an integer factor.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        if self.rank() != 3 {
            return Err(Error::dim(
                "avg_pool2d",
                format!("expected [c,h,w], got {}", self.shape()),
            ));
        }
        let (c, h, w) = (self.dims()[0], self.dims()[1], self.dims()[2]);
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::Config(format!(
                "avg_pool2d: {h}x{w} not divisible by factor {k}"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let src = self.data();
        let inv = T::from_f64(1.0 / (k * k) as f64);
        let mut data = vec![T::zero(); c * ho * wo];
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc = acc + src[(ci * h + oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    data[(ci * ho + oy) * wo + ox] = acc * inv;
                }
            }
        }
        let in_len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(&[c, ho, wo]),
            data,
            vec![self.clone()],
            "avg_pool2d",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); in_len];
                for ci in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = ctx.grad[(ci * ho + oy) * wo + ox] * inv;
                            for dy in 0..k {
                                for dx in 0..k {
                                    g[(ci * h + oy * k + dy) * w + ox * k + dx] = gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Splits `[c,h,w]` into non-overlapping `p x p` patches, flattened
    /// channel-major: row `gy*(w/p)+gx` holds `x[c, gy*p+dy, gx*p+dx]` ordered
    /// by (c, dy, dx). Output is `[(h/p)*(w/p), c*p*p]`.
    pub fn unfold_patches(&self, p: usize) -> Result<Tensor<T>> {
        if self.rank() != 3 {
            return Err(Error::dim(
                "unfold_patches",
                format!("expected [c,h,w], got {}", self.shape()),
            ));
        }
        let (c, h, w) = (self.dims()[0], self.dims()[1], self.dims()[2]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "unfold_patches: {h}x{w} not divisible by patch {p}"
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let row_len = c * p * p;
        let src = self.data();
        let mut data = vec![T::zero(); gh * gw * row_len];
        for gy in 0..gh {
            for gx in 0..gw {
                let row = gy * gw + gx;
                let dst = &mut data[row * row_len..(row + 1) * row_len];
                let mut i = 0;
                for ci in 0..c {
                    for dy in 0..p {
                        let base = (ci * h + gy * p + dy) * w + gx * p;
                        for dx in 0..p {
                            dst[i] = src[base + dx];
                            i += 1;
                        }
                    }
                }
            }
        }
        let in_len = self.numel();
        Ok(Tensor::from_op(
            Shape::new(&[gh * gw, row_len]),
            data,
            vec![self.clone()],
            "unfold_patches",
            Box::new(move |ctx: &BackwardCtx<'_, T>| -> ParentGrads<T> {
                if !ctx.needs[0] {
                    return vec![None];
                }
                let mut g = vec![T::zero(); in_len];
                for gy in 0..gh {
                    for gx in 0..gw {
                        let row = gy * gw + gx;
                        let src = &ctx.grad[row * row_len..(row + 1) * row_len];
                        let mut i = 0;
                        for ci in 0..c {
                            for dy in 0..p {
                                let base = (ci * h + gy * p + dy) * w + gx * p;
                                for dx in 0..p {
                                    g[base + dx] = src[i];
                                    i += 1;
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// attention

/// softmax(q k^T / sqrt(d)) v with an optional additive mask on the scores.
///
/// Composed from primitive ops, so gradients flow through every path.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::dim(
            "attention",
            format!("expected rank-2 q/k/v, got {}, {}, {}", q.shape(), k.shape(), v.shape()),
        ));
    }
    let d = q.dims()[1];
    if k.dims()[1] != d {
        return Err(Error::dim(
            "attention",
            format!("q {} and k {} feature dims differ", q.shape(), k.shape()),
        ));
    }
    if k.dims()[0] != v.dims()[0] {
        return Err(Error::dim(
            "attention",
            format!("k {} and v {} token counts differ", k.shape(), v.shape()),
        ));
    }
    let mut scores = q.matmul(&k.transpose2d()?)?.scale(1.0 / (d as f64).sqrt());
    if let Some(m) = mask {
        scores = scores.add(m)?;
    }
    let weights = scores.softmax(1)?;
    weights.matmul(v)
}
