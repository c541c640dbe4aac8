use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub r2: f64,
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Coefficient of determination about the target mean. Unclamped; negative
/// for predictors worse than the mean.
pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64> {
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2 {
            mae: mae(pred, target),
        });
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn metrics(pred: &[f64], target: &[f64]) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Size(format!(
            "metrics need equal nonempty inputs, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(Metrics {
        mae: mae(pred, target),
        r2: r2(pred, target)?,
    })
}
