//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Operations are recorded on a [`Tape`] whenever at least one input is
//! tracked. [`Tape::backward`] sweeps the records in reverse and returns a
//! [`Gradients`] map keyed by tape node.
//!
//! ```
//! use rigmotion::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.sq_norm().unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Non-smooth ops (`clamp`, `max_scalar`) pass the gradient through at the
//! boundary point and block it strictly inside the clamped region.

pub mod check;
mod ops;
mod tensor;

pub use ops::{CustomOp, Unary};
pub use tensor::{Gradients, Result, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tensor belongs to a different tape")]
    ForeignTape,
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

#[cfg(test)]
mod tests;
