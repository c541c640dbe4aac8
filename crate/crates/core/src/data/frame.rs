use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_COLUMN: &str = "timestamp";
pub const OHLCV: [&str; 5] = ["open", "high", "low", "close", "volume"];
pub const AMOUNT: &str = "amount";

/// Which feature columns a CSV must provide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self::with_amount(true)
    }
}

impl CsvSchema {
    /// OHLCV, plus turnover `amount` when `amount` is set (D = 6 vs 5).
    pub fn with_amount(amount: bool) -> Self {
        let mut features: Vec<String> = OHLCV.iter().map(|s| s.to_string()).collect();
        if amount {
            features.push(AMOUNT.to_string());
        }
        Self { features }
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }
}

/// A time-ordered feature matrix `[T, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub timestamps: Vec<i64>,
    pub columns: Vec<String>,
    /// Row-major `[T, D]`.
    pub values: Vec<f64>,
}

impl SeriesFrame {
    pub fn new(timestamps: Vec<i64>, columns: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != timestamps.len() * columns.len() {
            return Err(Error::Shape(format!(
                "{} rows x {} columns needs {} values, got {}",
                timestamps.len(),
                columns.len(),
                timestamps.len() * columns.len(),
                values.len()
            )));
        }
        if let Some(row) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Ordering { row: row + 1 });
        }
        Ok(Self {
            timestamps,
            columns,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.width();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(j).step_by(self.width()).copied()
    }

    /// The first `rows` rows.
    pub fn head(&self, rows: usize) -> SeriesFrame {
        let rows = rows.min(self.len());
        SeriesFrame {
            timestamps: self.timestamps[..rows].to_vec(),
            columns: self.columns.clone(),
            values: self.values[..rows * self.width()].to_vec(),
        }
    }

    /// Rows from `start` on.
    pub fn tail_from(&self, start: usize) -> SeriesFrame {
        let start = start.min(self.len());
        SeriesFrame {
            timestamps: self.timestamps[start..].to_vec(),
            columns: self.columns.clone(),
            values: self.values[start * self.width()..].to_vec(),
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Reads an OHLCV CSV. Extra columns are ignored; the frame's columns follow
/// `schema` order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SeriesFrame> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let ts_col = find(TIMESTAMP_COLUMN)?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;
    let volume_pos = schema.features.iter().position(|f| f == "volume");

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp `{}`", field(ts_col)),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(Error::Ordering {
                    row: timestamps.len(),
                });
            }
        }
        timestamps.push(ts);
        for (k, &col) in feature_cols.iter().enumerate() {
            let raw = field(col);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse `{raw}`", schema.features[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}`: non-finite value", schema.features[k]),
                });
            }
            if Some(k) == volume_pos && v <= 0.0 {
                return Err(Error::Parse {
                    line,
                    message: "zero or negative volume".into(),
                });
            }
            values.push(v);
        }
    }
    SeriesFrame::new(timestamps, schema.features.clone(), values)
}

/// Writes the frame as CSV with epoch-second timestamps. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv_to(frame, &mut w).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(frame: &SeriesFrame, w: &mut W) -> std::io::Result<()> {
    write!(w, "{TIMESTAMP_COLUMN}")?;
    for c in &frame.columns {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for (t, ts) in frame.timestamps.iter().enumerate() {
        write!(w, "{ts}")?;
        for v in frame.row(t) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}
