use rand::Rng;

use crate::autograd::{Tape, Var, LAYERNORM_EPS};
use crate::error::{Error, Result};

use super::linear::Linear;
use super::params::{Bindings, Layer, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gain: store.constant(format!("{prefix}.gain"), &[width], 1.0),
            bias: store.constant(format!("{prefix}.bias"), &[width], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        tape.layernorm(x, params[self.gain], params[self.bias], LAYERNORM_EPS)
    }
}

/// Pre-norm transformer encoder block:
/// `m = MSA(LN(n)) + n`, then `l = MLP(LN(m)) + m`.
///
/// Attention is unmasked scaled dot-product with scale `1/sqrt(d_model/heads)`.
/// The MLP is `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub ln_attn: LayerNormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln_mlp: LayerNormParams,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

/// Encoder output plus the per-head attention weights `[B, M, M]`.
#[derive(Debug)]
pub struct EncoderTrace {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl EncoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        num_heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            return Err(Error::config(
                "heads",
                format!("d_model {d_model} must be divisible by heads {num_heads}"),
            ));
        }
        Ok(Self {
            d_model,
            num_heads,
            d_ff,
            ln_attn: LayerNormParams::new(store, &format!("{prefix}.ln_attn"), d_model),
            query: Linear::new(store, &format!("{prefix}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{prefix}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{prefix}.value"), d_model, d_model, rng),
            out: Linear::new(store, &format!("{prefix}.out"), d_model, d_model, rng),
            ln_mlp: LayerNormParams::new(store, &format!("{prefix}.ln_mlp"), d_model),
            mlp_in: Linear::new(store, &format!("{prefix}.mlp_in"), d_model, d_ff, rng),
            mlp_out: Linear::new(store, &format!("{prefix}.mlp_out"), d_ff, d_model, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, n: Var) -> Result<Var> {
        Ok(self.forward_traced(tape, params, n)?.output)
    }

    /// `n: [B, M, d_model] -> [B, M, d_model]`
    pub fn forward_traced(&self, tape: &mut Tape, params: &Bindings, n: Var) -> Result<EncoderTrace> {
        let shape = tape.shape(n);
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(Error::Shape(format!(
                "encoder expects [batch, nodes, {}], got {shape:?}",
                self.d_model
            )));
        }
        let normed = self.ln_attn.forward(tape, params, n)?;
        let (attended, attention) = self.self_attention(tape, params, normed)?;
        let m = tape.add(attended, n)?;

        let normed = self.ln_mlp.forward(tape, params, m)?;
        let hidden = self.mlp_in.forward(tape, params, normed)?;
        let hidden = tape.relu(hidden);
        let mlp = self.mlp_out.forward(tape, params, hidden)?;
        let output = tape.add(mlp, m)?;
        Ok(EncoderTrace { output, attention })
    }

    fn self_attention(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.query.forward(tape, params, x)?;
        let k = self.key.forward(tape, params, x)?;
        let v = self.value.forward(tape, params, x)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        let mut weights = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = tape.slice_last(q, h * dh, dh)?;
            let kh = tape.slice_last(k, h * dh, dh)?;
            let vh = tape.slice_last(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.batch_matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let w = tape.softmax_rows(scores);
            heads.push(tape.batch_matmul(w, vh)?);
            weights.push(w);
        }
        let context = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_last(&heads)?
        };
        Ok((self.out.forward(tape, params, context)?, weights))
    }
}

impl Layer for EncoderLayer {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.ln_attn.gain, self.ln_attn.bias];
        for l in [&self.query, &self.key, &self.value, &self.out] {
            ids.extend(l.param_ids());
        }
        ids.extend([self.ln_mlp.gain, self.ln_mlp.bias]);
        ids.extend(self.mlp_in.param_ids());
        ids.extend(self.mlp_out.param_ids());
        ids
    }
}
