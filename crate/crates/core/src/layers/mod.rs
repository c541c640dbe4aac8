//! Network building blocks: node aggregation by convolution, position
//! embeddings, the pre-norm encoder block and (bi)directional LSTMs.

mod conv;
mod encoder;
mod linear;
mod lstm;
mod params;

pub use conv::{conv_output_len, Conv1dLayer};
pub use encoder::{EncoderLayer, EncoderTrace, LayerNormParams};
pub use linear::{Linear, PositionEmbedding};
pub use lstm::{lstm_step, BiLstm, LstmCell, PreparedCell, FORGET_BIAS_INIT};
pub use params::{Bindings, Layer, Param, ParamId, ParamStore};
