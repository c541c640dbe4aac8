//! Hybrid convolution / transformer-encoder / bidirectional-LSTM networks for
//! short-window price forecasting, together with the small autodiff engine,
//! data pipeline and training loop they run on.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod rng;
pub mod training;

pub use autograd::{Tape, Tensor, Var};
pub use error::{Error, Result};
