//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its tensors; calling
//! [`Tape::backward`] on a scalar result consumes the tape and returns the
//! gradient of that scalar with respect to every tensor that requires one.
//!
//! The engine is generic over [`Real`], which is implemented for `f32`
//! (training) and `f64` (gradient verification). Reductions always run
//! sequentially in memory order so results are bit-reproducible.
//!
//! Broadcasting for [`Tape::add`], [`Tape::sub`] and [`Tape::mul`] follows
//! the usual trailing-axis alignment: shapes are right-aligned, missing
//! leading axes are treated as size 1, and a size-1 axis stretches to match
//! the other operand.

mod error;
pub mod gradcheck;
mod ops;
mod real;
mod shape;
mod tape;

pub use error::AutodiffError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use real::{Precision, Real};
pub use shape::Shape;
pub use tape::{Gradients, Tape, Tensor, Var};

pub type Result<T> = std::result::Result<T, AutodiffError>;
