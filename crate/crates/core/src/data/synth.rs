//! Synthetic OHLCV-shaped series for desk-scale experiments.
//!
//! Each kind defines a latent close path; open, high, low, volume and
//! amount are derived from it so that the channels are correlated the way
//! real bars are (high >= max(open, close), low <= min(open, close),
//! volume > 0, amount = volume * mid price).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

use super::frame::{CsvSchema, SeriesFrame};

/// 5-minute bars.
pub const BAR_SECONDS: i64 = 300;
pub const START_TIMESTAMP: i64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Sum of two sinusoids; noiseless unless `noise > 0`.
    Sine,
    /// Autoregressive(1) latent with Gaussian shocks.
    Ar1,
    /// Linear drift plus Gaussian noise.
    TrendNoise,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Sine => "sine",
            SynthKind::Ar1 => "ar1",
            SynthKind::TrendNoise => "trend_noise",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sine" => Ok(SynthKind::Sine),
            "ar1" => Ok(SynthKind::Ar1),
            "trend_noise" | "trend" => Ok(SynthKind::TrendNoise),
            other => Err(Error::config(
                "synth",
                format!("unknown series kind `{other}` (expected sine, ar1 or trend_noise)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Price level the series oscillates or drifts around.
    pub base: f64,
    /// Sine amplitude, or the scale of the stochastic latent.
    pub amplitude: f64,
    /// Main sine period in bars.
    pub period: f64,
    /// Secondary sine period in bars (half amplitude).
    pub slow_period: f64,
    /// Standard deviation of additive noise, in units of `amplitude`.
    pub noise: f64,
    /// AR(1) coefficient.
    pub phi: f64,
    /// Per-bar drift for `trend_noise`, in units of `amplitude`.
    pub slope: f64,
    pub base_volume: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            base: 3000.0,
            amplitude: 100.0,
            period: 40.0,
            slow_period: 173.0,
            noise: 0.0,
            phi: 0.9,
            slope: 0.002,
            base_volume: 1.0e7,
        }
    }
}

/// Generates `rows` bars with 5 or 6 features. Deterministic in `seed`.
pub fn synth_series(
    kind: SynthKind,
    rows: usize,
    features: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<SeriesFrame> {
    let schema = match features {
        6 => CsvSchema::with_amount(true),
        5 => CsvSchema::with_amount(false),
        other => {
            return Err(Error::config(
                "features",
                format!("synthetic series have 5 or 6 features, not {other}"),
            ))
        }
    };
    if rows == 0 {
        return Err(Error::Size("cannot synthesize an empty series".into()));
    }
    let mut rng = substream(seed, Stream::Synth);
    let mut gauss = move || -> f64 { rng.sample(StandardNormal) };
    let p = params;
    let tau = std::f64::consts::TAU;
    let spread0 = 0.05 * p.amplitude;

    let mut latent = 0.0;
    let mut values = Vec::with_capacity(rows * features);
    for t in 0..rows {
        let tf = t as f64;
        let (close, open, spread, volume) = match kind {
            SynthKind::Sine => {
                let path = |s: f64| {
                    (tau * s / p.period).sin() + 0.5 * (tau * s / p.slow_period).sin()
                };
                let (e1, e2) = if p.noise > 0.0 { (gauss(), gauss()) } else { (0.0, 0.0) };
                let close = p.base + p.amplitude * (path(tf) + p.noise * e1);
                let open = p.base + p.amplitude * (path(tf - 0.5) + p.noise * e2);
                let spread = spread0 * (1.0 + 0.5 * (tau * tf / 7.0).sin());
                let volume = p.base_volume * (1.5 + (tau * tf / p.period + 1.0).sin());
                (close, open, spread, volume)
            }
            SynthKind::Ar1 | SynthKind::TrendNoise => {
                let shock = gauss();
                let level = if kind == SynthKind::Ar1 {
                    latent = p.phi * latent + shock;
                    latent
                } else {
                    p.slope * tf + shock
                };
                let close = p.base + p.amplitude * level;
                let open = close + p.amplitude * 0.3 * gauss();
                let spread = spread0 * (1.0 + gauss().abs());
                let volume = p.base_volume * (0.2 * gauss()).exp();
                (close, open, spread, volume)
            }
        };
        let high = open.max(close) + spread;
        let low = open.min(close) - spread;
        values.extend_from_slice(&[open, high, low, close, volume]);
        if features == 6 {
            values.push(volume * 0.5 * (open + close));
        }
    }
    let timestamps = (0..rows as i64)
        .map(|t| START_TIMESTAMP + t * BAR_SECONDS)
        .collect();
    SeriesFrame::new(timestamps, schema.features, values)
}
