//! Differentiable tensor kernels and the fusion networks built on them.

pub mod adam;
pub mod autograd;
pub mod checkpoint;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod losses;
pub mod ops;
pub mod params;
pub mod sis;
pub mod tcc;
pub mod tensor;

pub use autograd::{no_grad, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
