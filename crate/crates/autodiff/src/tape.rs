use std::sync::Arc;

use crate::shape::BroadcastMap;
use crate::{AutodiffError, Real, Result, Shape};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owned snapshot of a tensor: values plus, optionally, its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub values: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, values: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != values.len() {
            return Err(AutodiffError::invalid(
                "tensor",
                format!("shape {shape} needs {} values, got {}", shape.numel(), values.len()),
            ));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let values = vec![T::zero(); shape.numel()];
        Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sum { input: Var, axis: usize },
    Mean { input: Var, axis: usize },
    SumAll(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Softplus(Var),
    Gelu(Var),
    Elu(Var, T),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    Huber(Var, T),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    SegmentSoftmax { input: Var, segments: Arc<[usize]>, count: usize },
    GatherRows { input: Var, index: Arc<[usize]> },
    SegmentSum { input: Var, index: Arc<[usize]> },
    Map { input: Var, deriv: fn(T, T) -> T },
}

pub(crate) struct Node<T> {
    pub(crate) shape: Shape,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a computation. Nodes are stored in creation order,
/// which is a topological order of the expression graph.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        Tensor {
            shape: node.shape.clone(),
            values: node.value.clone(),
            requires_grad: node.requires_grad,
            grad: None,
        }
    }

    pub(crate) fn push(&mut self, shape: Shape, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.numel(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Runs reverse-mode differentiation from `loss`, consuming the tape.
    ///
    /// Every leaf created with `requires_grad` receives a gradient; leaves the
    /// loss does not depend on get zeros.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.nodes[loss.0].shape.clone();
        if loss_shape.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_node(i, &op, &g, &mut grads);
        }

        let mut leaves = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            let is_grad_leaf = node.requires_grad && matches!(node.op, Op::Leaf) && i <= loss.0;
            let keep = if is_grad_leaf {
                Some(grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]))
            } else {
                None
            };
            leaves.push(keep);
        }
        // Leaves created after the loss cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(Gradients { grads: leaves })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, out_shape: &Shape, g: &[T], scale: impl Fn(usize) -> T) {
        let map = BroadcastMap::new(&self.nodes[v.0].shape, out_shape);
        if let Some(buf) = self.grad_buf(grads, v) {
            for (i, &gi) in g.iter().enumerate() {
                buf[map.offset(i)] = buf[map.offset(i)] + gi * scale(i);
            }
        }
    }

    fn accumulate_elementwise(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], local: impl Fn(usize) -> T) {
        if let Some(buf) = self.grad_buf(grads, v) {
            for (i, (b, &gi)) in buf.iter_mut().zip(g).enumerate() {
                *b = *b + gi * local(i);
            }
        }
    }

    fn backward_node(&self, i: usize, op: &Op<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out_shape = &self.nodes[i].shape;
        let out = &self.nodes[i].value;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(grads, *a, out_shape, g, |_| T::one());
                self.accumulate_broadcast(grads, *b, out_shape, g, |_| T::one());
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(grads, *a, out_shape, g, |_| T::one());
                self.accumulate_broadcast(grads, *b, out_shape, g, |_| -T::one());
            }
            Op::Mul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let amap = BroadcastMap::new(&self.nodes[a.0].shape, out_shape);
                let bmap = BroadcastMap::new(&self.nodes[b.0].shape, out_shape);
                self.accumulate_broadcast(grads, *a, out_shape, g, |k| bv[bmap.offset(k)]);
                self.accumulate_broadcast(grads, *b, out_shape, g, |k| av[amap.offset(k)]);
            }
            Op::Scale(a, c) => self.accumulate_elementwise(grads, *a, g, |_| *c),
            Op::AddScalar(a) => self.accumulate_elementwise(grads, *a, g, |_| T::one()),
            Op::MatMul(a, b) => {
                let ad = self.nodes[a.0].shape.dims().to_vec();
                let bd = self.nodes[b.0].shape.dims().to_vec();
                let (m, k, n) = (ad[0], ad[1], bd[1]);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                if let Some(da) = self.grad_buf(grads, *a) {
                    // dA = G @ B^T
                    T::gemm(m, n, k, g, (n as isize, 1), bv, (1, n as isize), T::one(), da);
                }
                if let Some(db) = self.grad_buf(grads, *b) {
                    // dB = A^T @ G
                    T::gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), T::one(), db);
                }
            }
            Op::Reshape(a) => self.accumulate_elementwise(grads, *a, g, |_| T::one()),
            Op::Transpose(a) => {
                let d = out_shape.dims();
                let (r, c) = (d[0], d[1]);
                if let Some(buf) = self.grad_buf(grads, *a) {
                    // out is r x c, input is c x r
                    for row in 0..r {
                        for col in 0..c {
                            buf[col * r + row] = buf[col * r + row] + g[row * c + col];
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = out_shape.split_at_axis(*axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v.0].shape.dim(*axis);
                    if let Some(buf) = self.grad_buf(grads, *v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for j in 0..len * inner {
                                buf[dst + j] = buf[dst + j] + g[src + j];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, len, inner) = out_shape.split_at_axis(*axis);
                let full = self.nodes[input.0].shape.dim(*axis);
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for j in 0..len * inner {
                            buf[dst + j] = buf[dst + j] + g[src + j];
                        }
                    }
                }
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let (outer, len, inner) = self.nodes[input.0].shape.split_at_axis(*axis);
                let factor = if matches!(op, Op::Mean { .. }) {
                    T::one() / T::from_usize(len).unwrap()
                } else {
                    T::one()
                };
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for o in 0..outer {
                        for l in 0..len {
                            for j in 0..inner {
                                let idx = (o * len + l) * inner + j;
                                buf[idx] = buf[idx] + g[o * inner + j] * factor;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(buf) = self.grad_buf(grads, *a) {
                    for b in buf.iter_mut() {
                        *b = *b + g[0];
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| if x[k] > T::zero() { T::one() } else { *slope });
            }
            Op::Sigmoid(a) => self.accumulate_elementwise(grads, *a, g, |k| out[k] * (T::one() - out[k])),
            Op::Softplus(a) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| crate::ops::sigmoid_scalar(x[k]));
            }
            Op::Gelu(a) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| crate::ops::gelu_grad(x[k]));
            }
            Op::Elu(a, alpha) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| if x[k] > T::zero() { T::one() } else { out[k] + *alpha });
            }
            Op::Exp(a) => self.accumulate_elementwise(grads, *a, g, |k| out[k]),
            Op::Log(a) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| T::one() / x[k]);
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| if x[k] >= *lo && x[k] <= *hi { T::one() } else { T::zero() });
            }
            Op::Huber(a, delta) => {
                let x = &self.nodes[a.0].value;
                self.accumulate_elementwise(grads, *a, g, |k| {
                    let r = x[k];
                    if r.abs() <= *delta {
                        r
                    } else {
                        *delta * r.signum()
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = *out_shape.dims().last().unwrap();
                let rows = normalized.len() / d;
                let gv = &self.nodes[gain.0].value;
                if let Some(buf) = self.grad_buf(grads, *gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] = buf[j] + g[r * d + j] * normalized[r * d + j];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] = buf[j] + g[r * d + j];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *input) {
                    let df = T::from_usize(d).unwrap();
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let xhat = &normalized[row.clone()];
                        let gr = &g[row.clone()];
                        let mut sum_dx = T::zero();
                        let mut sum_dx_x = T::zero();
                        for j in 0..d {
                            let dxhat = gr[j] * gv[j];
                            sum_dx = sum_dx + dxhat;
                            sum_dx_x = sum_dx_x + dxhat * xhat[j];
                        }
                        let scale = inv_std[r] / df;
                        for j in 0..d {
                            let dxhat = gr[j] * gv[j];
                            let v = scale * (df * dxhat - sum_dx - xhat[j] * sum_dx_x);
                            buf[r * d + j] = buf[r * d + j] + v;
                        }
                    }
                }
            }
            Op::SegmentSoftmax { input, segments, count } => {
                let mut dots = vec![T::zero(); *count];
                for (k, &s) in segments.iter().enumerate() {
                    dots[s] = dots[s] + out[k] * g[k];
                }
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for (k, &s) in segments.iter().enumerate() {
                        buf[k] = buf[k] + out[k] * (g[k] - dots[s]);
                    }
                }
            }
            Op::GatherRows { input, index } => {
                let width = if index.is_empty() { 0 } else { out.len() / index.len() };
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for (k, &row) in index.iter().enumerate() {
                        for j in 0..width {
                            buf[row * width + j] = buf[row * width + j] + g[k * width + j];
                        }
                    }
                }
            }
            Op::SegmentSum { input, index } => {
                let width = if index.is_empty() { 0 } else { self.nodes[input.0].value.len() / index.len() };
                if let Some(buf) = self.grad_buf(grads, *input) {
                    for (k, &seg) in index.iter().enumerate() {
                        for j in 0..width {
                            buf[k * width + j] = buf[k * width + j] + g[seg * width + j];
                        }
                    }
                }
            }
            Op::Map { input, deriv } => {
                let x = &self.nodes[input.0].value;
                self.accumulate_elementwise(grads, *input, g, |k| deriv(x[k], out[k]));
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a `requires_grad` leaf; `None` for anything else.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
