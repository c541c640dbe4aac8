//! Optimization, evaluation and run reporting.

mod compare;
mod metrics;
mod optimizer;
mod train;

pub use compare::{
    compare, markdown_report, table3_csv, table3_markdown, Comparison, RunOutcome, REFERENCE_FOOTER,
};
pub use metrics::{mae, metrics, r2, Metrics};
pub use optimizer::{OptimizerState, DEFAULT_LR, DEFAULT_MOMENTUM};
pub use train::{
    evaluate, evaluate_split, predict_windows, train, train_observed, EpochEnd, RunReport,
    SplitKind, TrainOptions, REPORT_CSV_HEADER,
};
