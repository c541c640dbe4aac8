//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod tape;
mod tensor;

pub use tape::{sigmoid, Activation, OpKind, Tape, Var};
pub use tensor::Tensor;

/// Default epsilon for layer normalization.
pub const LAYERNORM_EPS: f64 = 1e-5;
