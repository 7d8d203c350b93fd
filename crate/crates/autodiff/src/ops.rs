use std::sync::Arc;

use crate::shape::{broadcast_shapes, BroadcastMap};
use crate::tape::Op;
use crate::{AutodiffError, Real, Result, Shape, Tape, Tensor, Var};

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn gelu_consts<T: Real>() -> (T, T) {
    // sqrt(2 / pi), cubic coefficient of the tanh approximation
    (T::from_f64_lossy(0.797_884_560_802_865_4), T::from_f64_lossy(0.044_715))
}

pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let (c, k) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

impl<T: Real> Tape<T> {
    pub fn leaf(&mut self, shape: impl Into<Shape>, values: Vec<T>, requires_grad: bool) -> Result<Var> {
        let shape = shape.into();
        if shape.numel() != values.len() {
            return Err(AutodiffError::invalid(
                "leaf",
                format!("shape {shape} needs {} values, got {}", shape.numel(), values.len()),
            ));
        }
        Ok(self.push(shape, values, Op::Leaf, requires_grad))
    }

    /// Trainable leaf.
    pub fn param(&mut self, shape: impl Into<Shape>, values: Vec<T>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    pub fn constant(&mut self, shape: impl Into<Shape>, values: Vec<T>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn from_tensor(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.leaf(t.shape.clone(), t.values.clone(), t.requires_grad)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(Shape::scalar(), vec![v], Op::Leaf, false)
    }

    fn unary(&mut self, a: Var, value: Vec<T>, op: Op<T>) -> Var {
        let shape = self.shape(a).clone();
        let rg = self.requires_grad(a);
        self.push(shape, value, op, rg)
    }

    fn map_values(&self, a: Var, f: impl Fn(T) -> T) -> Vec<T> {
        self.value(a).iter().map(|&x| f(x)).collect()
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let sa = self.shape(a).clone();
        let sb = self.shape(b).clone();
        let out = broadcast_shapes(&sa, &sb).ok_or_else(|| AutodiffError::shape(name, &sa, &sb))?;
        let am = BroadcastMap::new(&sa, &out);
        let bm = BroadcastMap::new(&sb, &out);
        let av = self.value(a);
        let bv = self.value(b);
        let value = (0..out.numel()).map(|i| f(av[am.offset(i)], bv[bm.offset(i)])).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.map_values(a, |x| x * c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.map_values(a, |x| x + c);
        self.unary(a, v, Op::AddScalar(a))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).clone();
        let sb = self.shape(b).clone();
        if sa.rank() != 2 || sb.rank() != 2 || sa.dim(1) != sb.dim(0) {
            return Err(AutodiffError::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa.dim(0), sa.dim(1), sb.dim(1));
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), (k as isize, 1), self.value(b), (n as isize, 1), T::zero(), &mut c);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Shape::new([m, n]), c, Op::MatMul(a, b), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Shape>) -> Result<Var> {
        let shape = shape.into();
        let from = self.shape(a).clone();
        if shape.numel() != from.numel() {
            return Err(AutodiffError::shape("reshape", &from, &shape));
        }
        let v = self.value(a).to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(shape, v, Op::Reshape(a), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).clone();
        if s.rank() != 2 {
            return Err(AutodiffError::invalid("transpose", format!("expected rank 2, got {s}")));
        }
        let (r, c) = (s.dim(0), s.dim(1));
        let av = self.value(a);
        let mut v = Vec::with_capacity(r * c);
        for col in 0..c {
            for row in 0..r {
                v.push(av[row * c + col]);
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Shape::new([c, r]), v, Op::Transpose(a), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(AutodiffError::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).clone();
        if axis >= base.rank() {
            return Err(AutodiffError::invalid("concat", format!("axis {axis} out of range for {base}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.rank() == base.rank()
                && s.dims().iter().zip(base.dims()).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::shape("concat", &base, s));
            }
            total += s.dim(axis);
        }
        let mut dims = base.dims().to_vec();
        dims[axis] = total;
        let out_shape = Shape::new(dims);
        let (outer, _, inner) = out_shape.split_at_axis(axis);
        let mut value = Vec::with_capacity(out_shape.numel());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v).dim(axis);
                let src = &self.value(v)[o * len * inner..(o + 1) * len * inner];
                value.extend_from_slice(src);
            }
        }
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(out_shape, value, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).clone();
        if axis >= s.rank() || start + len > s.dim(axis) || len == 0 {
            return Err(AutodiffError::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s}", start + len),
            ));
        }
        let (outer, full, inner) = s.split_at_axis(axis);
        let av = self.value(a);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            value.extend_from_slice(&av[from..from + len * inner]);
        }
        let mut dims = s.dims().to_vec();
        dims[axis] = len;
        let rg = self.requires_grad(a);
        Ok(self.push(Shape::new(dims), value, Op::Slice { input: a, axis, start }, rg))
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape(a).clone();
        if axis >= s.rank() {
            return Err(AutodiffError::invalid("sum", format!("axis {axis} out of range for {s}")));
        }
        let (outer, len, inner) = s.split_at_axis(axis);
        let av = self.value(a);
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &x) in value[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + x;
                }
            }
        }
        if mean {
            let n = T::from_usize(len).unwrap();
            value.iter_mut().for_each(|x| *x = *x / n);
        }
        let op = if mean {
            Op::Mean { input: a, axis }
        } else {
            Op::Sum { input: a, axis }
        };
        let rg = self.requires_grad(a);
        Ok(self.push(s.without_axis(axis), value, op, rg))
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = self.requires_grad(a);
        self.push(Shape::scalar(), vec![total], Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).len().max(1)).unwrap();
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.map_values(a, |x| if x > T::zero() { x } else { x * slope });
        self.unary(a, v, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map_values(a, sigmoid_scalar);
        self.unary(a, v, Op::Sigmoid(a))
    }

    /// `log(1 + exp(x))`, evaluated as `max(x, 0) + log(1 + exp(-|x|))`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.map_values(a, |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p());
        self.unary(a, v, Op::Softplus(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map_values(a, gelu_scalar);
        self.unary(a, v, Op::Gelu(a))
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Var {
        let v = self.map_values(a, |x| if x > T::zero() { x } else { alpha * x.exp_m1() });
        self.unary(a, v, Op::Elu(a, alpha))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map_values(a, T::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|&&x| !(x > T::zero())) {
            return Err(AutodiffError::Domain {
                op: "log",
                reason: format!("input {bad} is not strictly positive"),
            });
        }
        let v = self.map_values(a, T::ln);
        Ok(self.unary(a, v, Op::Log(a)))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.map_values(a, |x| x.max(lo).min(hi));
        self.unary(a, v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise Huber penalty of residuals: `0.5 r^2` inside `delta`,
    /// `delta (|r| - delta / 2)` outside.
    pub fn huber(&mut self, residual: Var, delta: T) -> Var {
        let half = T::from_f64_lossy(0.5);
        let v = self.map_values(residual, |r| {
            if r.abs() <= delta {
                half * r * r
            } else {
                delta * (r.abs() - half * delta)
            }
        });
        self.unary(residual, v, Op::Huber(residual, delta))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let s = self.shape(x).clone();
        let Some(&d) = s.dims().last() else {
            return Err(AutodiffError::invalid("layer_norm", "scalar input"));
        };
        for p in [gain, bias] {
            if self.shape(p).dims() != [d] {
                return Err(AutodiffError::shape("layer_norm", &s, self.shape(p)));
            }
        }
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let rows = xv.len() / d;
        let df = T::from_usize(d).unwrap();
        let mut normalized = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / df;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / df;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normalized.push(xh);
                out.push(xh * gv[j] + bv[j]);
            }
        }
        let rg = self.requires_grad(x) || self.requires_grad(gain) || self.requires_grad(bias);
        Ok(self.push(
            s,
            out,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax of `scores` within groups sharing a segment id.
    ///
    /// `segments[i]` names the group of flat element `i`; ids must be below
    /// `count`. Each group is max-shifted before exponentiation.
    pub fn segment_softmax(&mut self, scores: Var, segments: &Arc<[usize]>, count: usize) -> Result<Var> {
        let xv = self.value(scores);
        if xv.len() != segments.len() {
            return Err(AutodiffError::invalid(
                "segment_softmax",
                format!("{} scores but {} segment ids", xv.len(), segments.len()),
            ));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= count) {
            return Err(AutodiffError::invalid("segment_softmax", format!("segment id {bad} >= {count}")));
        }
        let mut max = vec![T::neg_infinity(); count];
        for (&x, &s) in xv.iter().zip(segments.iter()) {
            if x > max[s] {
                max[s] = x;
            }
        }
        let mut out: Vec<T> = xv.iter().zip(segments.iter()).map(|(&x, &s)| (x - max[s]).exp()).collect();
        let mut denom = vec![T::zero(); count];
        for (&e, &s) in out.iter().zip(segments.iter()) {
            denom[s] = denom[s] + e;
        }
        for (e, &s) in out.iter_mut().zip(segments.iter()) {
            *e = *e / denom[s];
        }
        let shape = self.shape(scores).clone();
        let rg = self.requires_grad(scores);
        Ok(self.push(
            shape,
            out,
            Op::SegmentSoftmax {
                input: scores,
                segments: Arc::clone(segments),
                count,
            },
            rg,
        ))
    }

    /// Selects rows (first-axis slices) of `a` by index.
    pub fn gather_rows(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let s = self.shape(a).clone();
        if s.rank() == 0 {
            return Err(AutodiffError::invalid("gather_rows", "scalar input"));
        }
        let rows = s.dim(0);
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(AutodiffError::invalid("gather_rows", format!("row {bad} out of range for {s}")));
        }
        let width = s.numel() / rows.max(1);
        let av = self.value(a);
        let mut value = Vec::with_capacity(index.len() * width);
        for &r in index.iter() {
            value.extend_from_slice(&av[r * width..(r + 1) * width]);
        }
        let mut dims = s.dims().to_vec();
        dims[0] = index.len();
        let rg = self.requires_grad(a);
        Ok(self.push(
            Shape::new(dims),
            value,
            Op::GatherRows {
                input: a,
                index: Arc::clone(index),
            },
            rg,
        ))
    }

    /// Sums rows of `a` into `count` output rows: row `k` goes to `index[k]`.
    pub fn segment_sum(&mut self, a: Var, index: &Arc<[usize]>, count: usize) -> Result<Var> {
        let s = self.shape(a).clone();
        if s.rank() == 0 || s.dim(0) != index.len() {
            return Err(AutodiffError::invalid(
                "segment_sum",
                format!("{} segment ids for input {s}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&r| r >= count) {
            return Err(AutodiffError::invalid("segment_sum", format!("segment id {bad} >= {count}")));
        }
        let width = if index.is_empty() { 0 } else { s.numel() / index.len() };
        let av = self.value(a);
        let mut value = vec![T::zero(); count * width];
        for (k, &seg) in index.iter().enumerate() {
            for j in 0..width {
                value[seg * width + j] = value[seg * width + j] + av[k * width + j];
            }
        }
        let mut dims = s.dims().to_vec();
        dims[0] = count;
        let rg = self.requires_grad(a);
        Ok(self.push(
            Shape::new(dims),
            value,
            Op::SegmentSum {
                input: a,
                index: Arc::clone(index),
            },
            rg,
        ))
    }

    /// Elementwise map with a caller-supplied derivative `deriv(x, f(x))`.
    pub fn map_unary(&mut self, a: Var, f: fn(T) -> T, deriv: fn(T, T) -> T) -> Var {
        let v = self.map_values(a, f);
        self.unary(a, v, Op::Map { input: a, deriv })
    }
}
