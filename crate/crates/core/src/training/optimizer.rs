use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamStore;

pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// SGD with heavy-ball momentum: `v <- mu*v + g`, `p <- p - lr*v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
            return Err(Error::Contract(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Contract("optimizer state belongs to a different model".into()));
        }
        let (lr, mu) = (self.lr, self.momentum);
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            let g = p.tensor.grad.take().expect("checked above");
            let values = p.tensor.values_mut();
            for ((x, vel), g) in values.iter_mut().zip(v.iter_mut()).zip(&g) {
                *vel = mu * *vel + g;
                *x -= lr * *vel;
            }
        }
        Ok(())
    }
}
