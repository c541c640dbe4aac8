use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ctlnet::data::{CsvSchema, DatasetSpec, NormMode, Split, SynthKind, SynthParams};
use ctlnet::models::{Architecture, ModelConfig};
use ctlnet::training::{SplitKind, TrainOptions};

use crate::CliError;

pub const DEFAULT_OUT: &str = "ctlnet-out";
pub const SNAPSHOT_FILE: &str = "run_config.json";

/// Everything a command needs. Persisted next to its outputs so a run can
/// be repeated with `--config <out>/run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub architectures: Vec<Architecture>,
    pub data: Vec<PathBuf>,
    pub synth: Vec<SynthKind>,
    /// Length of synthetic series.
    pub rows: usize,
    /// Standard deviation of synthetic noise in units of the amplitude.
    pub noise: f64,
    /// Include the turnover column (6 features instead of 5).
    pub amount: bool,
    pub window: usize,
    pub split: f64,
    pub paper_norm: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub d_model: Option<usize>,
    pub heads: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub ff_multiplier: Option<usize>,
    pub lstm_hidden: Option<usize>,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub raw_heads: Option<usize>,
    /// Model to score (evaluate only).
    pub checkpoint: Option<PathBuf>,
    /// Split to score (evaluate only).
    pub on: SplitKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            command: None,
            architectures: Vec::new(),
            data: Vec::new(),
            synth: Vec::new(),
            rows: 2000,
            noise: 0.0,
            amount: true,
            window: DatasetSpec::default().window,
            split: 0.8,
            paper_norm: false,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            seed: 0,
            out: PathBuf::from(DEFAULT_OUT),
            jobs: 1,
            d_model: None,
            heads: None,
            encoder_layers: None,
            ff_multiplier: None,
            lstm_hidden: None,
            kernel: None,
            stride: None,
            raw_heads: None,
            checkpoint: None,
            on: SplitKind::Test,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags given here override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Architecture(s): ctlnet, lstm, cnn_lstm, tclnet.
    #[arg(long, value_delimiter = ',')]
    pub arch: Vec<Architecture>,
    /// OHLCV CSV file (repeatable for compare).
    #[arg(long, value_name = "CSV")]
    pub data: Vec<PathBuf>,
    /// Synthetic series kind(s): sine, ar1, trend_noise.
    #[arg(long, value_delimiter = ',')]
    pub synth: Vec<SynthKind>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Use five features (no `amount` column).
    #[arg(long)]
    pub no_amount: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Fraction of rows used for training.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "CTLNET_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Normalize with whole-series statistics instead of training-only ones.
    #[arg(long)]
    pub paper_norm: bool,
    /// Parallel training runs for compare.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub ff_multiplier: Option<usize>,
    /// LSTM hidden size per direction.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Attention heads of the TCLNet encoder (must divide the feature count).
    #[arg(long)]
    pub raw_heads: Option<usize>,
    /// Checkpoint to score (evaluate).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Split to score (evaluate): train or test.
    #[arg(long, value_parser = parse_split)]
    pub on: Option<SplitKind>,
}

fn parse_split(s: &str) -> Result<SplitKind, String> {
    match s {
        "train" => Ok(SplitKind::Train),
        "test" => Ok(SplitKind::Test),
        other => Err(format!("expected train or test, got `{other}`")),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ctlnet::Error::io(path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
    }

    /// Defaults, then the config file, then flags.
    pub fn from_args(command: &str, args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(c) = &cfg.command {
            if c != command {
                log::warn!("config was written by `{c}`, running `{command}`");
            }
        }
        cfg.command = Some(command.to_string());
        if !args.arch.is_empty() {
            cfg.architectures = args.arch.clone();
        }
        if !args.data.is_empty() || !args.synth.is_empty() {
            cfg.data = args.data.clone();
            cfg.synth = args.synth.clone();
        }
        set(&mut cfg.rows, args.rows);
        set(&mut cfg.noise, args.noise);
        if args.no_amount {
            cfg.amount = false;
        }
        set(&mut cfg.epochs, args.epochs);
        set(&mut cfg.batch_size, args.batch_size);
        set(&mut cfg.lr, args.lr);
        set(&mut cfg.momentum, args.momentum);
        set(&mut cfg.window, args.window);
        set(&mut cfg.split, args.split);
        set(&mut cfg.seed, args.seed);
        set(&mut cfg.out, args.out.clone());
        if args.paper_norm {
            cfg.paper_norm = true;
        }
        set(&mut cfg.jobs, args.jobs);
        if args.checkpoint.is_some() {
            cfg.checkpoint = args.checkpoint.clone();
        }
        set(&mut cfg.on, args.on);
        let model_flags = [
            (&mut cfg.d_model, args.d_model),
            (&mut cfg.heads, args.heads),
            (&mut cfg.encoder_layers, args.encoder_layers),
            (&mut cfg.ff_multiplier, args.ff_multiplier),
            (&mut cfg.lstm_hidden, args.hidden),
            (&mut cfg.kernel, args.kernel),
            (&mut cfg.stride, args.stride),
            (&mut cfg.raw_heads, args.raw_heads),
        ];
        for (slot, flag) in model_flags {
            if flag.is_some() {
                *slot = flag;
            }
        }
        Ok(cfg)
    }

    pub fn features(&self) -> usize {
        CsvSchema::with_amount(self.amount).width()
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema::with_amount(self.amount)
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            noise: self.noise,
            ..SynthParams::default()
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            window: self.window,
            split: Split::Fraction(self.split),
            norm: if self.paper_norm {
                NormMode::WholeSeries
            } else {
                NormMode::TrainOnly
            },
            ..DatasetSpec::default()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
        }
    }

    /// Model config for `arch`; unset sizes come from `base`.
    pub fn model_config(&self, arch: Architecture, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            architecture: arch,
            window: self.window,
            features: self.features(),
            d_model: self.d_model.unwrap_or(base.d_model),
            heads: self.heads.unwrap_or(base.heads),
            encoder_layers: self.encoder_layers.unwrap_or(base.encoder_layers),
            ff_multiplier: self.ff_multiplier.unwrap_or(base.ff_multiplier),
            lstm_hidden: self.lstm_hidden.unwrap_or(base.lstm_hidden),
            kernel: self.kernel.unwrap_or(base.kernel),
            stride: self.stride.unwrap_or(base.stride),
            raw_heads: self.raw_heads.unwrap_or(base.raw_heads),
            seed: self.seed,
            ..base.clone()
        }
    }

    /// Records the sizes `model` actually used, so the snapshot stands alone.
    pub fn pin_model(&mut self, model: &ModelConfig) {
        self.d_model = Some(model.d_model);
        self.heads = Some(model.heads);
        self.encoder_layers = Some(model.encoder_layers);
        self.ff_multiplier = Some(model.ff_multiplier);
        self.lstm_hidden = Some(model.lstm_hidden);
        self.kernel = Some(model.kernel);
        self.stride = Some(model.stride);
        self.raw_heads = Some(model.raw_heads);
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self, base: &ModelConfig) -> Result<Vec<ModelConfig>, CliError> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(ctlnet::Error::config("split", format!("train fraction {} not in (0, 1)", self.split)).into());
        }
        if self.jobs == 0 {
            return Err(ctlnet::Error::config("jobs", "must be at least 1").into());
        }
        if self.rows == 0 {
            return Err(ctlnet::Error::config("rows", "must be at least 1").into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ctlnet::Error::config("noise", "must be a finite nonnegative number").into());
        }
        self.train_options().validate()?;
        self.architectures
            .iter()
            .map(|&arch| {
                let cfg = self.model_config(arch, base);
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(SNAPSHOT_FILE);
        let json = serde_json::to_string_pretty(self).map_err(ctlnet::Error::from)?;
        std::fs::write(&path, json).map_err(|e| ctlnet::Error::io(&path, e))?;
        Ok(())
    }
}
