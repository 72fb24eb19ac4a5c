//! f64 tensor engine: values, reverse-mode tape, and the finite-difference
//! gradient oracle. Everything else in the crate builds on this module.

pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use gradcheck::{check_tensors, GradCheckReport};
pub use tensor::Tensor;
