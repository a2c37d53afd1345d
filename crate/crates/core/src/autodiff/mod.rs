//! Dense reverse-mode automatic differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Worst};
pub use tape::{Axis, OpKind, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {0}")]
    Shape(String),
    #[error("non-finite value produced by {0:?}")]
    NonFinite(OpKind),
    #[error("backward needs a 1x1 loss, got {}x{}", .0[0], .0[1])]
    NonScalarLoss([usize; 2]),
    #[error("objective is not finite ({0})")]
    NonFiniteObjective(String),
}
