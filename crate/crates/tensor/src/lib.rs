//! Minimal dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Values are recorded on a [`Tape`] as operations execute; [`Tape::backward`]
//! walks the tape once in reverse and accumulates gradients in a fixed order,
//! so repeated runs are bitwise reproducible. Everything is generic over
//! [`Scalar`]: models compute in `f32` and are cast to `f64` for
//! finite-difference verification ([`gradcheck`]).
//!
//! Broadcasting is limited to trailing-suffix operands (biases, layer-norm
//! affine parameters) and a shared right-hand matrix in [`Tape::matmul`].

mod error;
pub mod gradcheck;
mod rng;
mod scalar;
pub mod serialize;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many, grad_check_many_floor, GradCheckReport};
pub use rng::{Rng, RngState};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
