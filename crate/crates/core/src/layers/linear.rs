use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;

use super::params::{Bindings, Layer, ParamId, ParamStore};

/// Affine map over the last axis. The weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = store.uniform(
            format!("{prefix}.weight"),
            &[in_features, out_features],
            bound,
            rng,
        );
        let bias = store.constant(format!("{prefix}.bias"), &[out_features], 0.0);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let y = tape.matmul(x, params[self.weight])?;
        tape.add(y, params[self.bias])
    }
}

impl Layer for Linear {
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Learnable per-node vectors added to the node embeddings.
#[derive(Debug, Clone)]
pub struct PositionEmbedding {
    pub num_nodes: usize,
    pub width: usize,
    pub table: ParamId,
}

impl PositionEmbedding {
    pub const INIT_BOUND: f64 = 0.02;

    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        num_nodes: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.uniform(
            format!("{prefix}.table"),
            &[num_nodes, width],
            Self::INIT_BOUND,
            rng,
        );
        Self {
            num_nodes,
            width,
            table,
        }
    }

    /// `z: [B, M, width] -> z + table`
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, z: Var) -> Result<Var> {
        let shape = tape.shape(z);
        if shape.len() != 3 || shape[1] != self.num_nodes || shape[2] != self.width {
            return Err(crate::error::Error::config(
                "num_nodes",
                format!(
                    "position table is {}x{}, input is {shape:?}",
                    self.num_nodes, self.width
                ),
            ));
        }
        tape.add(z, params[self.table])
    }
}

impl Layer for PositionEmbedding {
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.table]
    }
}
