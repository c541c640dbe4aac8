use std::io::Write;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{Dataset, Window};
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, ModelConfig};
use crate::rng::{substream, Stream};

use super::metrics::{metrics, Metrics};
use super::optimizer::{OptimizerState, DEFAULT_LR, DEFAULT_MOMENTUM};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        OptimizerState::new(self.lr, self.momentum).map(|_| ())
    }
}

/// Everything worth keeping from one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub architecture: Architecture,
    pub dataset: String,
    pub seed: u64,
    pub params: usize,
    /// Mean training MSE of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub train_mae: f64,
    pub train_r2: Option<f64>,
    pub test_mae: Option<f64>,
    /// `None` when the test split is empty or its targets are constant.
    pub test_r2: Option<f64>,
    pub seconds: f64,
    pub model: ModelConfig,
    pub options: TrainOptions,
}

pub const REPORT_CSV_HEADER: &str =
    "architecture,dataset,seed,params,epochs,final_loss,train_mae,train_r2,test_mae,test_r2,seconds";

fn opt_field(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn epochs_run(&self) -> usize {
        self.epoch_losses.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// One line matching [`REPORT_CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.architecture,
            self.dataset.replace(',', ";"),
            self.seed,
            self.params,
            self.epochs_run(),
            self.final_loss(),
            self.train_mae,
            opt_field(self.train_r2),
            opt_field(self.test_mae),
            opt_field(self.test_r2),
            self.seconds,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn write_loss_curve(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `model params train_mae test_mae r2 seconds` for terminals.
    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "{} params={} train_mae={:.4} test_mae={} r2={} time={:.2}s",
            self.architecture.display_name(),
            self.params,
            self.train_mae,
            fmt(self.test_mae),
            fmt(self.test_r2),
            self.seconds
        )
    }

    pub fn write_csv<W: Write>(reports: &[RunReport], mut w: W) -> std::io::Result<()> {
        writeln!(w, "{REPORT_CSV_HEADER}")?;
        for r in reports {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Per-epoch progress handed to a training observer.
#[derive(Debug, Clone, Copy)]
pub struct EpochEnd {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
}

/// Trains `model` for `options.epochs` epochs of shuffled minibatch SGD on
/// the training windows, then evaluates both splits.
pub fn train(model: &mut Model, dataset: &Dataset, options: &TrainOptions) -> Result<RunReport> {
    train_observed(model, dataset, options, |_, _| ControlFlow::Continue(()))
}

/// Like [`train`], calling `observer` after every epoch. Returning
/// `ControlFlow::Break` ends the run after that epoch.
pub fn train_observed<F>(
    model: &mut Model,
    dataset: &Dataset,
    options: &TrainOptions,
    mut observer: F,
) -> Result<RunReport>
where
    F: FnMut(EpochEnd, &Model) -> ControlFlow<()>,
{
    options.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Size("training split is empty".into()));
    }
    let cfg = model.config();
    if cfg.window != dataset.spec.window || cfg.features != dataset.features() {
        return Err(Error::Shape(format!(
            "model expects windows of {}x{}, dataset has {}x{}",
            cfg.window,
            cfg.features,
            dataset.spec.window,
            dataset.features()
        )));
    }
    let (window, features) = (cfg.window, cfg.features);
    let started = Instant::now();
    let mut optimizer = OptimizerState::new(options.lr, options.momentum)?;
    let mut shuffle = substream(options.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(options.epochs);

    for epoch in 1..=options.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(options.batch_size) {
            let windows: Vec<&Window> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let (x, y) = Dataset::batch(&windows, window, features)?;
            tape.reset();
            let bound = model.params().bind(&mut tape);
            let xv = tape.constant(x);
            let yv = tape.constant(y);
            let pred = model.forward(&mut tape, &bound, xv)?;
            let loss = tape.mse_loss(pred, yv)?;
            tape.backward(loss)?;
            total += tape.value(loss).values()[0] * chunk.len() as f64;
            model.params_mut().accumulate_grads(&tape, &bound);
            optimizer.step(model.params_mut())?;
        }
        let loss = total / order.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(loss);
        log::debug!("epoch {epoch}: loss {loss:.6e}");
        if observer(EpochEnd { epoch, loss }, model).is_break() {
            break;
        }
    }
    let seconds = started.elapsed().as_secs_f64();

    let train = split_metrics(model, &dataset.train)?;
    let test = if dataset.test.is_empty() {
        None
    } else {
        Some(split_metrics(model, &dataset.test)?)
    };
    Ok(RunReport {
        architecture: model.architecture(),
        dataset: dataset.source.clone(),
        seed: options.seed,
        params: model.count_params(),
        epoch_losses: losses,
        train_mae: train.0,
        train_r2: train.1,
        test_mae: test.map(|t| t.0),
        test_r2: test.and_then(|t| t.1),
        seconds,
        model: model.config().clone(),
        options: options.clone(),
    })
}

fn split_metrics(model: &Model, windows: &[Window]) -> Result<(f64, Option<f64>)> {
    match evaluate(model, windows) {
        Ok(m) => Ok((m.mae, Some(m.r2))),
        Err(Error::UndefinedR2 { mae }) => Ok((mae, None)),
        Err(e) => Err(e),
    }
}

/// Model predictions for each window, in order.
pub fn predict_windows(model: &Model, windows: &[Window]) -> Result<Vec<f64>> {
    let cfg = model.config();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let (x, _) = Dataset::batch(&refs, cfg.window, cfg.features)?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

/// MAE and R² of `model` on `windows`, in normalized units.
pub fn evaluate(model: &Model, windows: &[Window]) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::Size("cannot evaluate on an empty split".into()));
    }
    let pred = predict_windows(model, windows)?;
    let target: Vec<f64> = windows.iter().map(|w| w.y).collect();
    metrics(&pred, &target)
}

/// Which windows of a dataset to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Test,
}

pub fn evaluate_split(model: &Model, dataset: &Dataset, split: SplitKind) -> Result<Metrics> {
    match split {
        SplitKind::Train => evaluate(model, &dataset.train),
        SplitKind::Test => evaluate(model, &dataset.test),
    }
}

