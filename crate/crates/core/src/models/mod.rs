//! The four forecasting architectures behind one [`Model`] type.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::{Architecture, ModelConfig};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{
    Bindings, BiLstm, Conv1dLayer, EncoderLayer, Layer, Linear, ParamId, ParamStore,
    PositionEmbedding,
};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    conv: Option<Conv1dLayer>,
    position: Option<PositionEmbedding>,
    encoders: Vec<EncoderLayer>,
    bilstm: BiLstm,
    output: Linear,
}

impl Model {
    /// Builds and initializes a model. Construction is deterministic in
    /// `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(config.seed, Stream::Init);
        let mut params = ParamStore::new();
        let arch = config.architecture;
        let (n, d) = (config.window, config.features);

        let conv_layer = |params: &mut ParamStore, rng: &mut _| {
            Conv1dLayer::new(params, "conv", d, config.d_model, config.kernel, config.stride, rng)
        };
        let encoder_stack = |params: &mut ParamStore, rng: &mut _, width: usize, heads: usize| {
            (0..config.encoder_layers)
                .map(|i| {
                    EncoderLayer::new(
                        params,
                        &format!("encoder{i}"),
                        width,
                        heads,
                        config.ff_multiplier * width,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()
        };

        let (conv, position, encoders, lstm_input) = match arch {
            Architecture::Ctlnet => {
                let conv = conv_layer(&mut params, &mut rng);
                let nodes = conv.output_len(n)?;
                let pos = PositionEmbedding::new(&mut params, "pos", nodes, config.d_model, &mut rng);
                let enc = encoder_stack(&mut params, &mut rng, config.d_model, config.heads)?;
                (Some(conv), Some(pos), enc, config.d_model)
            }
            Architecture::Lstm => (None, None, Vec::new(), d),
            Architecture::CnnLstm => {
                let conv = conv_layer(&mut params, &mut rng);
                (Some(conv), None, Vec::new(), config.d_model)
            }
            Architecture::Tclnet => {
                let pos = PositionEmbedding::new(&mut params, "pos", n, d, &mut rng);
                let enc = encoder_stack(&mut params, &mut rng, d, config.raw_heads)?;
                let conv = conv_layer(&mut params, &mut rng);
                (Some(conv), Some(pos), enc, config.d_model)
            }
        };
        let bilstm = BiLstm::new(&mut params, "bilstm", lstm_input, config.lstm_hidden, &mut rng);
        let output = Linear::new(
            &mut params,
            "output",
            bilstm.output_width(),
            config.target_dim,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            params,
            conv,
            position,
            encoders,
            bilstm,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Number of tokens the encoder attends over, if there is one.
    pub fn encoder_tokens(&self) -> Option<usize> {
        self.position.as_ref().map(|p| p.num_nodes)
    }

    /// Parameters grouped by the layer that owns them, in forward order.
    pub fn layer_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups = Vec::new();
        let conv = self.conv.as_ref().map(|c| ("conv".to_string(), c.param_ids()));
        let pos = self.position.as_ref().map(|p| ("pos".to_string(), p.param_ids()));
        let enc = self
            .encoders
            .iter()
            .enumerate()
            .map(|(i, e)| (format!("encoder{i}"), e.param_ids()));
        match self.architecture() {
            Architecture::Tclnet => {
                groups.extend(pos);
                groups.extend(enc);
                groups.extend(conv);
            }
            _ => {
                groups.extend(conv);
                groups.extend(pos);
                groups.extend(enc);
            }
        }
        groups.push(("bilstm".to_string(), self.bilstm.param_ids()));
        groups.push(("output".to_string(), self.output.param_ids()));
        groups
    }

    pub fn conv(&self) -> Option<&Conv1dLayer> {
        self.conv.as_ref()
    }

    pub fn position(&self) -> Option<&PositionEmbedding> {
        self.position.as_ref()
    }

    pub fn encoders(&self) -> &[EncoderLayer] {
        &self.encoders
    }

    pub fn bilstm(&self) -> &BiLstm {
        &self.bilstm
    }

    pub fn output(&self) -> &Linear {
        &self.output
    }

    /// `x: [B, N, D] -> [B, target_dim]`, recorded on `tape`.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let expected = [self.config.window, self.config.features];
        let shape = tape.shape(x);
        if shape.len() != 3 || shape[1..] != expected {
            return Err(Error::Shape(format!(
                "model expects [batch, {}, {}], got {shape:?}",
                expected[0], expected[1]
            )));
        }
        let mut h = x;
        let run_encoder = |tape: &mut Tape, mut h: Var| -> Result<Var> {
            if let Some(pos) = &self.position {
                h = pos.forward(tape, params, h)?;
            }
            for enc in &self.encoders {
                h = enc.forward(tape, params, h)?;
            }
            Ok(h)
        };
        match self.architecture() {
            Architecture::Tclnet => {
                h = run_encoder(tape, h)?;
                h = self.conv.as_ref().expect("tclnet has conv").forward(tape, params, h)?;
            }
            _ => {
                if let Some(conv) = &self.conv {
                    h = conv.forward(tape, params, h)?;
                }
                h = run_encoder(tape, h)?;
            }
        }
        let v = self.bilstm.forward(tape, params, h)?;
        self.output.forward(tape, params, v)
    }

    /// Predictions for a `[N, D]` window or a `[B, N, D]` batch.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let x = match x.rank() {
            2 => x.clone().reshape(vec![1, x.shape()[0], x.shape()[1]])?,
            _ => x.clone(),
        };
        let mut tape = Tape::new();
        let frozen = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, &frozen, xv)?;
        Ok(tape.value(y).values().to_vec())
    }

    /// Copies parameter values from `other` wherever a parameter of the same
    /// name and shape exists; returns how many tensors were copied.
    pub fn copy_matching_params(&mut self, other: &Model) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut() {
            if let Some(id) = other.params.find(&p.name) {
                let src = &other.params.get(id).tensor;
                if src.shape() == p.tensor.shape() {
                    p.tensor.values_mut().copy_from_slice(src.values());
                    copied += 1;
                }
            }
        }
        copied
    }
}
