//! Dense arrays with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records each operation as it executes; [`Var`] handles refer
//! to recorded values. All arithmetic is carried out in `f64`.
//!
//! ```
//! use signbridge::tensor::{Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Array::from_vec(vec![1.0, 2.0, 3.0]), true);
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.sum(sq);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```

mod array;
pub mod gradcheck;
mod kernels;
mod ops;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use ops::{CustomOp, Reduction};
pub use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("axis {axis} invalid for shape {shape:?} in {op}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward was already run on this tape")]
    BackwardTwice,
    #[error("every position is ignored; the mean is undefined")]
    EmptyMean,
}
