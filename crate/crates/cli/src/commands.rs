use std::fs;
use std::path::{Path, PathBuf};

use ctlnet::data::{load_csv, synth_series, write_csv, Dataset, SeriesFrame, SynthKind};
use ctlnet::gradcheck::{self as check, GradcheckOptions};
use ctlnet::models::{load_checkpoint, save_checkpoint, Architecture, Model, ModelConfig};
use ctlnet::training::{self, markdown_report, table3_csv, Comparison, RunReport, SplitKind};

use crate::config::{RunArgs, RunConfig};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const DATASET_FILE: &str = "dataset.json";

enum Source {
    Csv(PathBuf),
    Synth(SynthKind),
}

impl Source {
    fn all(cfg: &RunConfig) -> Vec<Source> {
        cfg.data
            .iter()
            .cloned()
            .map(Source::Csv)
            .chain(cfg.synth.iter().copied().map(Source::Synth))
            .collect()
    }

    fn name(&self) -> String {
        match self {
            Source::Csv(p) => p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            Source::Synth(kind) => format!("synthetic {kind}"),
        }
    }

    fn load(&self, cfg: &RunConfig) -> Result<SeriesFrame, CliError> {
        Ok(match self {
            Source::Csv(path) => load_csv(path, &cfg.schema())?,
            Source::Synth(kind) => {
                synth_series(*kind, cfg.rows, cfg.features(), cfg.seed, &cfg.synth_params())?
            }
        })
    }

    fn dataset(&self, cfg: &RunConfig) -> Result<Dataset, CliError> {
        let frame = self.load(cfg)?;
        let ds = Dataset::build(&frame, &cfg.dataset_spec(), self.name())?;
        log::info!(
            "{}: {} rows, {} train and {} test windows",
            ds.source,
            ds.rows,
            ds.train.len(),
            ds.test.len()
        );
        Ok(ds)
    }
}

fn single_source(cfg: &RunConfig) -> Result<Source, CliError> {
    let mut sources = Source::all(cfg);
    match sources.len() {
        1 => Ok(sources.remove(0)),
        0 => Err(CliError::Usage("no data: pass --data <csv> or --synth <kind>".into())),
        n => Err(CliError::Usage(format!("this command takes one data source, got {n}"))),
    }
}

fn single_arch(cfg: &RunConfig) -> Result<Architecture, CliError> {
    match cfg.architectures.as_slice() {
        [] => Ok(Architecture::Ctlnet),
        [one] => Ok(*one),
        many => Err(CliError::Usage(format!(
            "this command takes one architecture, got {}",
            many.len()
        ))),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| ctlnet::Error::io(&cfg.out, e))?;
    Ok(cfg.out.clone())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| ctlnet::Error::io(path, e))?;
    Ok(())
}

pub fn synth(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args("synth", args)?;
    if !cfg.data.is_empty() {
        return Err(CliError::Usage("synth does not read --data".into()));
    }
    if cfg.synth.is_empty() {
        cfg.synth = vec![SynthKind::Sine];
    }
    cfg.validate(&ModelConfig::default())?;
    let dir = out_dir(&cfg)?;
    for kind in &cfg.synth {
        let frame = synth_series(*kind, cfg.rows, cfg.features(), cfg.seed, &cfg.synth_params())?;
        let path = dir.join(format!("{kind}.csv"));
        write_csv(&frame, &path)?;
        println!("wrote {} ({} rows)", path.display(), frame.len());
    }
    cfg.write_snapshot(&dir)
}

pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args("train", args)?;
    let arch = single_arch(&cfg)?;
    cfg.architectures = vec![arch];
    let model_cfg = cfg.validate(&ModelConfig::new(arch))?.remove(0);
    let source = single_source(&cfg)?;
    let dataset = source.dataset(&cfg)?;
    let dir = out_dir(&cfg)?;
    cfg.pin_model(&model_cfg);
    cfg.write_snapshot(&dir)?;

    let mut model = Model::build(&model_cfg)?;
    let report = training::train(&mut model, &dataset, &cfg.train_options())?;
    save_checkpoint(&model, &dir.join(CHECKPOINT_FILE))?;
    report.write_json(&dir.join(REPORT_FILE))?;
    report.write_loss_curve(&dir.join(LOSS_CURVE_FILE))?;
    dataset.descriptor().write(&dir.join(DATASET_FILE))?;
    println!("{}", report.summary());
    Ok(())
}

pub fn evaluate(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args("evaluate", args)?;
    let path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage("evaluate needs --checkpoint <file>".into()))?;
    let model = load_checkpoint(&path)?;
    let mc = model.config().clone();
    // The checkpoint fixes the window and feature set.
    cfg.window = mc.window;
    cfg.amount = match mc.features {
        6 => true,
        5 => false,
        n => return Err(ctlnet::Error::config("features", format!("checkpoint expects {n} features; CSV input has 5 or 6")).into()),
    };
    cfg.architectures = vec![mc.architecture];
    cfg.pin_model(&mc);
    cfg.validate(&mc)?;
    let dataset = single_source(&cfg)?.dataset(&cfg)?;
    let dir = out_dir(&cfg)?;
    cfg.write_snapshot(&dir)?;

    let split = match cfg.on {
        SplitKind::Train => "train",
        SplitKind::Test => "test",
    };
    let (mae, r2) = match training::evaluate_split(&model, &dataset, cfg.on) {
        Ok(m) => (m.mae, Some(m.r2)),
        Err(ctlnet::Error::UndefinedR2 { mae }) => {
            log::warn!("targets are constant on the {split} split; R² is undefined");
            (mae, None)
        }
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::json!({
        "architecture": mc.architecture,
        "checkpoint": path,
        "dataset": dataset.source,
        "split": split,
        "windows": match cfg.on { SplitKind::Train => dataset.train.len(), SplitKind::Test => dataset.test.len() },
        "mae": mae,
        "r2": r2,
    });
    write(&dir.join("evaluation.json"), serde_json::to_string_pretty(&json).map_err(ctlnet::Error::from)?)?;
    let r2 = r2.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} {split} MAE={mae:.4} R²={r2} ({})",
        mc.architecture.display_name(),
        dataset.source
    );
    Ok(())
}

pub const COMPARISON_FILE: &str = "comparison.md";

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn compare(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args("compare", args)?;
    if cfg.architectures.is_empty() {
        cfg.architectures = Architecture::ALL.to_vec();
    }
    if cfg.architectures.len() < 2 {
        return Err(CliError::Usage("compare needs at least two architectures".into()));
    }
    let base = ModelConfig::default();
    let configs = cfg.validate(&base)?;
    let sources = Source::all(&cfg);
    if sources.is_empty() {
        return Err(CliError::Usage("no data: pass --data <csv> or --synth <kind>".into()));
    }
    let datasets = sources.iter().map(|s| s.dataset(&cfg)).collect::<Result<Vec<_>, _>>()?;
    let dir = out_dir(&cfg)?;
    cfg.pin_model(&configs[0]);
    cfg.write_snapshot(&dir)?;

    let options = cfg.train_options();
    let mut comparisons: Vec<Comparison> = Vec::new();
    for ds in &datasets {
        comparisons.push(training::compare(&configs, ds, &options, cfg.jobs)?);
    }

    let report = markdown_report(&comparisons)?;
    write(&dir.join(COMPARISON_FILE), &report)?;
    write(&dir.join("table3.csv"), table3_csv(&comparisons)?)?;
    let mut table2 = String::new();
    for c in &comparisons {
        for (i, line) in c.table2_csv().lines().enumerate() {
            let lead = if i == 0 { "Dataset".to_string() } else { c.dataset.replace(',', ";") };
            table2.push_str(&format!("{lead},{line}\n"));
        }
    }
    write(&dir.join("table2.csv"), table2)?;
    let mut rows = Vec::new();
    let reports: Vec<RunReport> = comparisons.iter().flat_map(|c| c.reports()).cloned().collect();
    RunReport::write_csv(&reports, &mut rows).map_err(|e| ctlnet::Error::io(dir.join("reports.csv"), e))?;
    write(&dir.join("reports.csv"), rows)?;
    write(
        &dir.join("reports.json"),
        serde_json::to_string_pretty(&comparisons).map_err(ctlnet::Error::from)?,
    )?;
    for c in &comparisons {
        for run in &c.runs {
            if let Some(r) = &run.report {
                r.write_loss_curve(&dir.join(format!("loss_{}_{}.csv", slug(&c.dataset), slug(&run.label))))?;
            }
        }
    }
    print!("{report}");

    let total = comparisons.iter().map(|c| c.runs.len()).sum();
    let failed = comparisons
        .iter()
        .flat_map(|c| &c.runs)
        .filter(|r| r.report.is_none())
        .count();
    if failed > 0 {
        return Err(CliError::RunsFailed { failed, total });
    }
    Ok(())
}

pub fn gradcheck(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::from_args("gradcheck", args)?;
    if cfg.architectures.is_empty() {
        cfg.architectures = vec![Architecture::Ctlnet];
    }
    // Sizes default to the tiny model; optimizer flags play no part here.
    let mut configs = Vec::new();
    for &arch in &cfg.architectures {
        let cfg_arch = cfg.model_config(arch, &ModelConfig::tiny(arch));
        cfg_arch.validate()?;
        configs.push(cfg_arch);
    }
    let dir = out_dir(&cfg)?;
    cfg.pin_model(&configs[0]);
    cfg.write_snapshot(&dir)?;

    let options = GradcheckOptions {
        seed: cfg.seed,
        ..GradcheckOptions::default()
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for mc in &configs {
        let model = Model::build(mc)?;
        let report = check::gradcheck(&model, &options)?;
        println!("{report}");
        for l in report.layers.iter().chain(std::iter::once(&report.end_to_end)) {
            if !l.passed {
                failures.push(format!(
                    "{} layer `{}` rel err {:.3e} at {}",
                    mc.architecture, l.layer, l.max_rel_error, l.worst
                ));
            }
        }
        reports.push(report);
    }
    write(
        &dir.join("gradcheck.json"),
        serde_json::to_string_pretty(&reports).map_err(ctlnet::Error::from)?,
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(failures.join("; ")))
    }
}
