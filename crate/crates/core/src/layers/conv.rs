use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};

use super::params::{Bindings, Layer, ParamId, ParamStore};

/// Valid 1-D convolution that folds `kernel_size` adjacent time points into
/// one node embedding.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out_channels, in_channels, kernel_size]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1dLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel_size) as f64).sqrt();
        let weight = store.uniform(
            format!("{prefix}.weight"),
            &[out_channels, in_channels, kernel_size],
            bound,
            rng,
        );
        let bias = store.constant(format!("{prefix}.bias"), &[out_channels], 0.0);
        Self {
            kernel_size,
            in_channels,
            out_channels,
            stride,
            weight,
            bias,
        }
    }

    /// Number of nodes produced from `input_len` time points.
    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        conv_output_len(input_len, self.kernel_size, self.stride)
    }

    /// `x: [B, N, D] -> [B, M, out_channels]`
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[2] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects [batch, time, {}], got {shape:?}",
                self.in_channels
            )));
        }
        self.output_len(shape[1])?;
        tape.conv1d(x, params[self.weight], params[self.bias], self.stride)
    }
}

impl Layer for Conv1dLayer {
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

pub fn conv_output_len(input_len: usize, kernel_size: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("stride", "must be at least 1"));
    }
    if kernel_size == 0 || input_len < kernel_size {
        return Err(Error::config(
            "kernel",
            format!("kernel size {kernel_size} does not fit input length {input_len}"),
        ));
    }
    Ok((input_len - kernel_size) / stride + 1)
}
