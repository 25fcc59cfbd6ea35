//! Dense/sparse linear algebra and a small reverse-mode differentiation
//! engine covering the operations GCN/SGC forward passes and the
//! distillation losses need.

mod dense;
mod gradcheck;
mod sparse;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, GRAD_CHECK_EPS};
pub use sparse::SparseMatrix;
pub use tape::{Tape, Var};

pub(crate) use tape::softmax_row;
