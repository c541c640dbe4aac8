use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::conv_output_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Conv -> position embedding -> encoder -> BiLSTM -> output.
    Ctlnet,
    /// BiLSTM over raw time points -> output.
    Lstm,
    /// Conv -> BiLSTM -> output.
    CnnLstm,
    /// Position embedding -> encoder over raw time points -> conv -> BiLSTM -> output.
    Tclnet,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Ctlnet,
        Architecture::Lstm,
        Architecture::CnnLstm,
        Architecture::Tclnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Ctlnet => "ctlnet",
            Architecture::Lstm => "lstm",
            Architecture::CnnLstm => "cnn_lstm",
            Architecture::Tclnet => "tclnet",
        }
    }

    /// Column label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::Ctlnet => "CTLNet",
            Architecture::Lstm => "LSTM",
            Architecture::CnnLstm => "CNN-LSTM",
            Architecture::Tclnet => "TCLNet",
        }
    }

    pub fn has_conv(self) -> bool {
        !matches!(self, Architecture::Lstm)
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Architecture::Ctlnet | Architecture::Tclnet)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ctlnet" => Ok(Architecture::Ctlnet),
            "lstm" => Ok(Architecture::Lstm),
            "cnn_lstm" | "cnnlstm" => Ok(Architecture::CnnLstm),
            "tclnet" => Ok(Architecture::Tclnet),
            other => Err(Error::config(
                "architecture",
                format!("unknown architecture `{other}` (expected ctlnet, lstm, cnn_lstm or tclnet)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Time points per input window.
    pub window: usize,
    /// Features per time point.
    pub features: usize,
    /// Conv output channels and encoder width (for ctlnet).
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    /// MLP hidden width as a multiple of the encoder width.
    pub ff_multiplier: usize,
    pub lstm_hidden: usize,
    pub kernel: usize,
    pub stride: usize,
    pub target_dim: usize,
    /// Heads of the tclnet encoder, which runs at width `features`.
    pub raw_heads: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Ctlnet,
            window: 5,
            features: 6,
            d_model: 64,
            heads: 4,
            encoder_layers: 1,
            ff_multiplier: 4,
            lstm_hidden: 64,
            kernel: 3,
            stride: 1,
            target_dim: 1,
            raw_heads: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    /// The small configuration used for gradient checks.
    pub fn tiny(architecture: Architecture) -> Self {
        Self {
            architecture,
            d_model: 4,
            heads: 2,
            lstm_hidden: 4,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("features", self.features),
            ("d_model", self.d_model),
            ("lstm_hidden", self.lstm_hidden),
            ("target_dim", self.target_dim),
            ("ff_multiplier", self.ff_multiplier),
            ("stride", self.stride),
            ("kernel", self.kernel),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        let arch = self.architecture;
        if arch.has_conv() {
            conv_output_len(self.window, self.kernel, self.stride)?;
        }
        if arch.has_encoder() && self.encoder_layers == 0 {
            return Err(Error::config("encoder_layers", "must be at least 1"));
        }
        match arch {
            Architecture::Ctlnet if self.heads == 0 || self.d_model % self.heads != 0 => {
                Err(Error::config(
                    "heads",
                    format!(
                        "d_model ({}) must be divisible by heads ({})",
                        self.d_model, self.heads
                    ),
                ))
            }
            Architecture::Tclnet if self.raw_heads == 0 || self.features % self.raw_heads != 0 => {
                Err(Error::config(
                    "raw_heads",
                    format!(
                        "features ({}) must be divisible by raw_heads ({})",
                        self.features, self.raw_heads
                    ),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Number of encoder tokens for architectures that have an encoder.
    pub fn encoder_tokens(&self) -> Option<usize> {
        match self.architecture {
            Architecture::Ctlnet => conv_output_len(self.window, self.kernel, self.stride).ok(),
            Architecture::Tclnet => Some(self.window),
            _ => None,
        }
    }
}
