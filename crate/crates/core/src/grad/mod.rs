//! Reverse-mode automatic differentiation over dense tensors.

mod check;
mod graph;
pub(crate) mod kernels;
mod params;
mod scalar;
mod tensor;

pub use check::{finite_diff_check, rel_err, FdEntry, FdOptions, FdReport};
pub use graph::{Bound, CustomOp, Gradients, Graph, L1Norm, Var};
pub use params::ParamSet;
pub use scalar::Scalar;
pub use tensor::Tensor;
