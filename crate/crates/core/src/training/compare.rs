use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};

use super::train::{train, RunReport, TrainOptions};

/// Printed under every comparison table for orientation.
pub const REFERENCE_FOOTER: &str = "Reference (SSE Composite Index, 5-minute bars): \
CTLNet MAE 0.0108, R² 0.971. Not comparable with synthetic runs.";

/// One column of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub config: ModelConfig,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub runs: Vec<RunOutcome>,
}

fn labels(configs: &[ModelConfig]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(configs.len());
    for c in configs {
        let base = c.architecture.display_name().to_string();
        let seen = out.iter().filter(|l| l.split('#').next() == Some(base.as_str())).count();
        out.push(if seen == 0 { base } else { format!("{base}#{}", seen + 1) });
    }
    out
}

fn run_one(config: &ModelConfig, dataset: &Dataset, options: &TrainOptions) -> Result<RunReport> {
    let mut model = Model::build(config)?;
    train(&mut model, dataset, options)
}

/// Trains every config on the same dataset and options. At most `jobs`
/// runs execute at once; a failing run is recorded, not propagated.
pub fn compare(
    configs: &[ModelConfig],
    dataset: &Dataset,
    options: &TrainOptions,
    jobs: usize,
) -> Result<Comparison> {
    if configs.len() < 2 {
        return Err(Error::config("architectures", "a comparison needs at least two models"));
    }
    options.validate()?;
    let jobs = jobs.clamp(1, configs.len());
    let results: Vec<Mutex<Option<Result<RunReport>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let r = run_one(&configs[i], dataset, options);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let runs = labels(configs)
        .into_iter()
        .zip(configs)
        .zip(results)
        .map(|((label, config), slot)| {
            let result = slot.into_inner().expect("result slot").expect("every run finishes");
            match result {
                Ok(report) => RunOutcome {
                    label,
                    config: config.clone(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{label} failed: {e}");
                    RunOutcome {
                        label,
                        config: config.clone(),
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(Comparison {
        dataset: dataset.source.clone(),
        runs,
    })
}

const FAILED: &str = "FAILED";

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.digits$}"))
}

impl RunOutcome {
    fn table2_cells(&self) -> [String; 3] {
        match &self.report {
            Some(r) => [
                thousands(r.params),
                format!("{:.2}s", r.seconds),
                format!("{:.4}", r.train_mae),
            ],
            None => match Model::build(&self.config) {
                Ok(m) => [thousands(m.count_params()), FAILED.into(), FAILED.into()],
                Err(_) => [FAILED.into(), FAILED.into(), FAILED.into()],
            },
        }
    }

    fn table3_cells(&self) -> [String; 2] {
        match &self.report {
            Some(r) => [cell(r.test_mae, 4), cell(r.test_r2, 3)],
            None => [FAILED.into(), FAILED.into()],
        }
    }
}

impl Comparison {
    pub fn labels(&self) -> Vec<&str> {
        self.runs.iter().map(|r| r.label.as_str()).collect()
    }

    pub fn reports(&self) -> Vec<&RunReport> {
        self.runs.iter().filter_map(|r| r.report.as_ref()).collect()
    }

    fn table2_rows(&self) -> Vec<Vec<String>> {
        let mut rows = vec![
            vec!["Parameters".to_string()],
            vec!["Train Time".to_string()],
            vec!["Train MAE".to_string()],
        ];
        for run in &self.runs {
            for (row, c) in rows.iter_mut().zip(run.table2_cells()) {
                row.push(c);
            }
        }
        rows
    }

    /// Models as columns; Parameters, Train Time and Train MAE as rows.
    pub fn table2_markdown(&self) -> String {
        let mut header = vec!["Models"];
        header.extend(self.labels());
        let mut out = markdown_row(&header);
        out.push_str(&markdown_rule(header.len()));
        for row in self.table2_rows() {
            out.push_str(&markdown_row(&row));
        }
        out
    }

    pub fn table2_csv(&self) -> String {
        let mut header = vec!["Models"];
        header.extend(self.labels());
        let mut out = csv_row(&header);
        for row in self.table2_rows() {
            out.push_str(&csv_row(&row));
        }
        out
    }
}

fn markdown_row<S: AsRef<str>>(cells: &[S]) -> String {
    let inner: Vec<&str> = cells.iter().map(|c| c.as_ref()).collect();
    format!("| {} |\n", inner.join(" | "))
}

fn markdown_rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

fn csv_row<S: AsRef<str>>(cells: &[S]) -> String {
    let quoted: Vec<String> = cells
        .iter()
        .map(|c| {
            let c = c.as_ref();
            if c.contains([',', '"']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.to_string()
            }
        })
        .collect();
    format!("{}\n", quoted.join(","))
}

fn table3_layout(comparisons: &[Comparison]) -> Result<(Vec<String>, Vec<String>, Vec<Vec<String>>)> {
    let first = comparisons
        .first()
        .ok_or_else(|| Error::Size("no comparisons to tabulate".into()))?;
    let labels = first.labels();
    if comparisons.iter().any(|c| c.labels() != labels) {
        return Err(Error::Contract("every dataset row must compare the same models".into()));
    }
    let mut models = vec!["Models".to_string()];
    let mut metrics = vec!["Metric".to_string()];
    for l in &labels {
        models.extend([l.to_string(), String::new()]);
        metrics.extend(["MAE".to_string(), "R²".to_string()]);
    }
    let rows = comparisons
        .iter()
        .map(|c| {
            let mut row = vec![c.dataset.clone()];
            for run in &c.runs {
                row.extend(run.table3_cells());
            }
            row
        })
        .collect();
    Ok((models, metrics, rows))
}

/// Datasets as rows; each model spans an MAE and an R² column.
pub fn table3_markdown(comparisons: &[Comparison]) -> Result<String> {
    let (models, metrics, rows) = table3_layout(comparisons)?;
    let mut out = markdown_row(&models);
    out.push_str(&markdown_rule(models.len()));
    out.push_str(&markdown_row(&metrics));
    for row in rows {
        out.push_str(&markdown_row(&row));
    }
    Ok(out)
}

pub fn table3_csv(comparisons: &[Comparison]) -> Result<String> {
    let (models, metrics, rows) = table3_layout(comparisons)?;
    let mut out = csv_row(&models);
    out.push_str(&csv_row(&metrics));
    for row in rows {
        out.push_str(&csv_row(&row));
    }
    Ok(out)
}

/// Both tables plus the reference footer, as one Markdown document.
pub fn markdown_report(comparisons: &[Comparison]) -> Result<String> {
    let mut out = String::from("## Training results\n\n");
    for c in comparisons {
        out.push_str(&format!("Dataset: {}\n\n", c.dataset));
        out.push_str(&c.table2_markdown());
        out.push('\n');
    }
    out.push_str("## Forecasting results\n\n");
    out.push_str(&table3_markdown(comparisons)?);
    out.push_str(&format!("\n{REFERENCE_FOOTER}\n"));
    let failures: Vec<String> = comparisons
        .iter()
        .flat_map(|c| c.runs.iter())
        .filter_map(|r| r.error.as_ref().map(|e| format!("- {}: {e}", r.label)))
        .collect();
    if !failures.is_empty() {
        out.push_str("\nFailed runs:\n\n");
        out.push_str(&failures.join("\n"));
        out.push('\n');
    }
    Ok(out)
}
