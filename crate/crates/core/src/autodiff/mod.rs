//! Minimal reverse-mode differentiation over dense tensors.

pub mod checkpoint;
pub mod gradcheck;
mod params;
pub(crate) mod real;
mod tape;
mod tensor;

pub use params::{Gradients, Param, ParamId, ParamStore};
pub use real::{DType, Real};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
