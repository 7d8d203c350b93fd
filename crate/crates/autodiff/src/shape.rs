use std::fmt;

/// Tensor dimensions, outermost first. The empty shape is a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
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

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// Splits the shape around `axis` into (outer, axis length, inner) sizes.
    pub(crate) fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.0[..axis].iter().product();
        let inner = self.0[axis + 1..].iter().product();
        (outer, self.0[axis], inner)
    }

    pub(crate) fn without_axis(&self, axis: usize) -> Shape {
        let mut dims = self.0.clone();
        dims.remove(axis);
        Shape(dims)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<&[usize]> for Shape {
    fn from(dims: &[usize]) -> Self {
        Shape(dims.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

/// Result shape of broadcasting `a` against `b`, or `None` when incompatible.
pub(crate) fn broadcast_shapes(a: &Shape, b: &Shape) -> Option<Shape> {
    let rank = a.rank().max(b.rank());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = padded_dim(a, rank, i);
        let db = padded_dim(b, rank, i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(Shape(out))
}

fn padded_dim(s: &Shape, rank: usize, i: usize) -> usize {
    let lead = rank - s.rank();
    if i < lead {
        1
    } else {
        s.0[i - lead]
    }
}

/// How elements of a (possibly broadcast) input map onto an output.
pub(crate) enum BroadcastMap {
    Identity,
    /// Input is a trailing block repeated across leading axes.
    Cyclic(usize),
    Explicit(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(input: &Shape, out: &Shape) -> Self {
        if input == out {
            return BroadcastMap::Identity;
        }
        let n = input.numel();
        let lead = out.rank() - input.rank();
        let trailing_match = input.0.iter().zip(&out.0[lead..]).all(|(a, b)| a == b);
        if trailing_match {
            return BroadcastMap::Cyclic(n.max(1));
        }
        // General case: walk the output with an odometer, tracking the
        // corresponding input offset (stride 0 on broadcast axes).
        let rank = out.rank();
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for i in (0..rank).rev() {
            let d = padded_dim(input, rank, i);
            strides[i] = if d == 1 { 0 } else { acc };
            acc *= d;
        }
        let total = out.numel();
        let mut offsets = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..total {
            offsets.push(off);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < out.0[ax] {
                    break;
                }
                off -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        BroadcastMap::Explicit(offsets)
    }

    #[inline]
    pub(crate) fn offset(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Identity => i,
            BroadcastMap::Cyclic(n) => i % n,
            BroadcastMap::Explicit(offsets) => offsets[i],
        }
    }
}
