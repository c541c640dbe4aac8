use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

use super::frame::SeriesFrame;

/// Per-feature min/max used for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fits on rows `[0, rows)` of `frame`.
    pub fn fit(frame: &SeriesFrame, rows: usize) -> Result<Self> {
        if rows == 0 || rows > frame.len() {
            return Err(Error::Size(format!(
                "cannot fit normalization on {rows} of {} rows",
                frame.len()
            )));
        }
        let d = frame.width();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for t in 0..rows {
            for (j, &v) in frame.row(t).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for (j, name) in frame.columns.iter().enumerate() {
            if max[j] == min[j] {
                log::warn!("feature `{name}` is constant over the fit range; it normalizes to 0");
            }
        }
        Ok(Self {
            columns: frame.columns.clone(),
            min,
            max,
        })
    }

    fn range(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn normalize_value(&self, j: usize, v: f64) -> f64 {
        (v - self.min[j]) / self.range(j)
    }

    pub fn denormalize_value(&self, j: usize, v: f64) -> f64 {
        v * self.range(j) + self.min[j]
    }

    /// Scales every row of `frame` into normalized units.
    pub fn normalize(&self, frame: &SeriesFrame) -> SeriesFrame {
        let d = frame.width();
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.normalize_value(i % d, v))
            .collect();
        SeriesFrame {
            timestamps: frame.timestamps.clone(),
            columns: frame.columns.clone(),
            values,
        }
    }

    pub fn denormalize(&self, frame: &SeriesFrame) -> SeriesFrame {
        let d = frame.width();
        let values = frame
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i % d, v))
            .collect();
        SeriesFrame {
            timestamps: frame.timestamps.clone(),
            columns: frame.columns.clone(),
            values,
        }
    }
}

/// Whose statistics drive min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Fit on the training rows only.
    #[default]
    TrainOnly,
    /// Fit on the whole series, train and test alike.
    WholeSeries,
}

/// Where the chronological split falls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// `floor(T * fraction)` rows go to training.
    Fraction(f64),
    /// Rows `[0, row)` go to training.
    Row(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub window: usize,
    pub horizon: usize,
    pub stride: usize,
    pub target: String,
    pub split: Split,
    pub norm: NormMode,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            window: 5,
            horizon: 1,
            stride: 1,
            target: "close".into(),
            split: Split::Fraction(0.8),
            norm: NormMode::TrainOnly,
        }
    }
}

/// One supervised pair: rows `[start, start + N)` predict the target at
/// row `start + N + horizon - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// Row-major `[N, D]`, normalized.
    pub x: Vec<f64>,
    pub y: f64,
}

/// Sliding windows over an (already normalized) frame.
pub fn make_windows(
    frame: &SeriesFrame,
    window: usize,
    horizon: usize,
    stride: usize,
    target: usize,
) -> Result<Vec<Window>> {
    if window == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("window", "window, horizon and stride must be at least 1"));
    }
    if target >= frame.width() {
        return Err(Error::config("target", format!("no column {target}")));
    }
    let t = frame.len();
    if t < window + horizon {
        return Err(Error::Size(format!(
            "{t} rows cannot hold a window of {window} plus horizon {horizon}"
        )));
    }
    let d = frame.width();
    let count = (t - window - horizon) / stride + 1;
    Ok((0..count)
        .map(|i| {
            let start = i * stride;
            Window {
                start,
                x: frame.values[start * d..(start + window) * d].to_vec(),
                y: frame.row(start + window + horizon - 1)[target],
            }
        })
        .collect())
}

/// Normalized, chronologically split supervised windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub source: String,
    pub rows: usize,
    pub columns: Vec<String>,
    /// First row belonging to the test period.
    pub split_row: usize,
    pub stats: NormStats,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    /// Normalized test-window values outside `[0, 1]` (kept, not clipped).
    pub test_out_of_range: usize,
}

impl Dataset {
    /// Builds train and test windows.
    ///
    /// Training windows lie entirely (inputs and target) before the split
    /// row; test windows lie entirely at or after it. Windows straddling the
    /// boundary are dropped.
    pub fn build(frame: &SeriesFrame, spec: &DatasetSpec, source: impl Into<String>) -> Result<Self> {
        let t = frame.len();
        let split_row = match spec.split {
            Split::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::config("split", format!("train fraction {f} not in (0, 1)")));
                }
                (t as f64 * f).floor() as usize
            }
            Split::Row(r) => {
                if r == 0 || r > t {
                    return Err(Error::config("split", format!("split row {r} not in [1, {t}]")));
                }
                r
            }
        };
        let span = spec.window + spec.horizon;
        if split_row < span {
            return Err(Error::Size(format!(
                "training portion has {split_row} rows, needs at least {span} for one window"
            )));
        }
        let target = frame
            .column_index(&spec.target)
            .ok_or_else(|| Error::config("target", format!("no column named `{}`", spec.target)))?;
        let stats = match spec.norm {
            NormMode::TrainOnly => NormStats::fit(frame, split_row)?,
            NormMode::WholeSeries => NormStats::fit(frame, t)?,
        };
        let train_frame = stats.normalize(&frame.head(split_row));
        let train = make_windows(&train_frame, spec.window, spec.horizon, spec.stride, target)?;

        let test = if t - split_row >= span {
            let test_frame = stats.normalize(&frame.tail_from(split_row));
            let mut w = make_windows(&test_frame, spec.window, spec.horizon, spec.stride, target)?;
            w.iter_mut().for_each(|w| w.start += split_row);
            w
        } else {
            Vec::new()
        };
        let test_out_of_range = test
            .iter()
            .flat_map(|w| w.x.iter().chain(std::iter::once(&w.y)))
            .filter(|v| !(0.0..=1.0).contains(*v))
            .count();
        if test_out_of_range > 0 {
            log::warn!("{test_out_of_range} normalized test values fall outside [0, 1]");
        }
        Ok(Self {
            spec: spec.clone(),
            source: source.into(),
            rows: t,
            columns: frame.columns.clone(),
            split_row,
            stats,
            train,
            test,
            test_out_of_range,
        })
    }

    pub fn features(&self) -> usize {
        self.columns.len()
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| *c == self.spec.target)
            .expect("target validated at build")
    }

    /// Stacks the chosen windows into `[B, N, D]` inputs and `[B, 1]` targets.
    pub fn batch(windows: &[&Window], window: usize, features: usize) -> Result<(Tensor, Tensor)> {
        let b = windows.len();
        let mut x = Vec::with_capacity(b * window * features);
        let mut y = Vec::with_capacity(b);
        for w in windows {
            x.extend_from_slice(&w.x);
            y.push(w.y);
        }
        Ok((
            Tensor::new(vec![b, window, features], x)?,
            Tensor::new(vec![b, 1], y)?,
        ))
    }

    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            source: self.source.clone(),
            rows: self.rows,
            columns: self.columns.clone(),
            spec: self.spec.clone(),
            split_row: self.split_row,
            train_windows: self.train.len(),
            test_windows: self.test.len(),
            test_out_of_range: self.test_out_of_range,
            stats: self.stats.clone(),
        }
    }
}

/// JSON sidecar describing how a dataset was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub source: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub spec: DatasetSpec,
    pub split_row: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub test_out_of_range: usize,
    pub stats: NormStats,
}

impl DatasetDescriptor {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}
