//! OHLCV ingestion, min-max scaling, sliding windows and synthetic series.

mod dataset;
mod frame;
mod synth;

pub use dataset::{make_windows, Dataset, DatasetDescriptor, DatasetSpec, NormMode, NormStats, Split, Window};
pub use frame::{load_csv, read_csv, write_csv, write_csv_to, CsvSchema, SeriesFrame, AMOUNT, OHLCV, TIMESTAMP_COLUMN};
pub use synth::{synth_series, SynthKind, SynthParams, BAR_SECONDS, START_TIMESTAMP};
