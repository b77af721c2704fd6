//! Minimal dense-tensor runtime with tape-based reverse-mode autodiff.
//!
//! Covers exactly the operation set the ecat codec needs: strided
//! convolutions and their transposes, affine maps, layer normalization,
//! multi-head attention, and the usual pointwise nonlinearities. Every
//! operation is generic over [`Scalar`] so the same code runs in `f32` for
//! training and `f64` for finite-difference verification.

mod error;
mod gradcheck;
pub mod init;
pub mod ops;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, RuntimeError};
pub use gradcheck::{
    gradient_check, relative_error, sample_indices, GradCheckConfig, GradCheckReport, InputReport,
};
pub use ops::softmax_rows;
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::{matmul, Scalar, Trans};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Attention weights for inspection; see [`Tape::attention`].
pub use ops::attention_probs;
