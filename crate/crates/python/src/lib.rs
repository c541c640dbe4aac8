//! Python bindings: `import ctlnet`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ctlnet::data::{self as data, CsvSchema, DatasetSpec, NormMode, Split, SynthKind, SynthParams};
use ctlnet::gradcheck::{self as check, GradcheckOptions};
use ctlnet::models::{self as models, Architecture};
use ctlnet::training::{self as training, SplitKind, TrainOptions};
use ctlnet::Tensor;

fn to_py(e: ctlnet::Error) -> PyErr {
    use ctlnet::Error as E;
    match e {
        E::Io { .. } | E::Checkpoint(_) => PyIOError::new_err(e.to_string()),
        E::Divergence { .. } | E::UndefinedR2 { .. } | E::Contract(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ctlnet::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Architecture and layer sizes of a forecaster.
#[pyclass(name = "ModelConfig", module = "ctlnet", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: models::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (
        architecture = "ctlnet", window = 5, features = 6, d_model = 64, heads = 4,
        encoder_layers = 1, ff_multiplier = 4, lstm_hidden = 64, kernel = 3, stride = 1,
        raw_heads = 2, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        architecture: &str,
        window: usize,
        features: usize,
        d_model: usize,
        heads: usize,
        encoder_layers: usize,
        ff_multiplier: usize,
        lstm_hidden: usize,
        kernel: usize,
        stride: usize,
        raw_heads: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = models::ModelConfig {
            architecture: architecture.parse().py_err()?,
            window,
            features,
            d_model,
            heads,
            encoder_layers,
            ff_multiplier,
            lstm_hidden,
            kernel,
            stride,
            raw_heads,
            seed,
            ..models::ModelConfig::default()
        };
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    /// A model small enough for gradient checking.
    #[staticmethod]
    #[pyo3(signature = (architecture = "ctlnet", seed = 0))]
    fn tiny(architecture: &str, seed: u64) -> PyResult<Self> {
        let arch: Architecture = architecture.parse().py_err()?;
        Ok(Self {
            inner: models::ModelConfig::tiny(arch).with_seed(seed),
        })
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.inner.architecture.name()
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window
    }

    #[getter]
    fn features(&self) -> usize {
        self.inner.features
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.inner.d_model
    }

    #[getter]
    fn lstm_hidden(&self) -> usize {
        self.inner.lstm_hidden
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        let inner: models::ModelConfig =
            serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// A forecaster with its parameters.
#[pyclass(name = "Model", module = "ctlnet")]
struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: &PyModelConfig) -> PyResult<Self> {
        Ok(Self {
            inner: models::Model::build(&config.inner).py_err()?,
        })
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params().iter().map(|p| p.name.clone()).collect()
    }

    /// Predicts from one `[N][D]` window or a `[B][N][D]` batch.
    fn predict(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let (n, d) = (self.inner.config().window, self.inner.config().features);
        let (batch, values): (usize, Vec<f64>) = if let Ok(b) = x.extract::<Vec<Vec<Vec<f64>>>>() {
            (b.len(), b.into_iter().flatten().flatten().collect())
        } else if let Ok(w) = x.extract::<Vec<Vec<f64>>>() {
            (1, w.into_iter().flatten().collect())
        } else {
            return Err(PyValueError::new_err("expected a [N][D] window or [B][N][D] batch of floats"));
        };
        if values.len() != batch * n * d {
            return Err(PyValueError::new_err(format!(
                "model expects windows of {n} rows x {d} features"
            )));
        }
        let t = Tensor::new(vec![batch, n, d], values).py_err()?;
        self.inner.predict(&t).py_err()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::save_checkpoint(&self.inner, &path).py_err()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_checkpoint(&path).py_err()?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, params={})",
            self.inner.architecture().display_name(),
            self.inner.count_params()
        )
    }
}

/// A time-ordered OHLCV table.
#[pyclass(name = "SeriesFrame", module = "ctlnet")]
struct PySeriesFrame {
    inner: data::SeriesFrame,
}

#[pymethods]
impl PySeriesFrame {
    /// Synthetic series: kind is `sine`, `ar1` or `trend_noise`.
    #[staticmethod]
    #[pyo3(signature = (kind = "sine", rows = 2000, features = 6, seed = 0, noise = 0.0))]
    fn synth(kind: &str, rows: usize, features: usize, seed: u64, noise: f64) -> PyResult<Self> {
        let kind: SynthKind = kind.parse().py_err()?;
        let params = SynthParams {
            noise,
            ..SynthParams::default()
        };
        Ok(Self {
            inner: data::synth_series(kind, rows, features, seed, &params).py_err()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, amount = true))]
    fn load_csv(path: PathBuf, amount: bool) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_csv(&path, &CsvSchema::with_amount(amount)).py_err()?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        data::write_csv(&self.inner, &path).py_err()
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn timestamps(&self) -> Vec<i64> {
        self.inner.timestamps.clone()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let j = self
            .inner
            .column_index(name)
            .ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))?;
        Ok(self.inner.column(j).collect())
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.row(t).to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Normalized sliding windows with a chronological train/test split.
#[pyclass(name = "Dataset", module = "ctlnet")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (frame, window = 5, split = 0.8, paper_norm = false, source = "frame"))]
    fn new(frame: &PySeriesFrame, window: usize, split: f64, paper_norm: bool, source: &str) -> PyResult<Self> {
        let spec = DatasetSpec {
            window,
            split: Split::Fraction(split),
            norm: if paper_norm {
                NormMode::WholeSeries
            } else {
                NormMode::TrainOnly
            },
            ..DatasetSpec::default()
        };
        Ok(Self {
            inner: data::Dataset::build(&frame.inner, &spec, source).py_err()?,
        })
    }

    #[getter]
    fn train_size(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn test_size(&self) -> usize {
        self.inner.test.len()
    }

    #[getter]
    fn split_row(&self) -> usize {
        self.inner.split_row
    }

    #[getter]
    fn features(&self) -> usize {
        self.inner.features()
    }

    /// `(windows, targets)` of one split, windows shaped `[B][N][D]`.
    #[pyo3(signature = (split = "train"))]
    fn windows(&self, split: &str) -> PyResult<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
        let ws = match parse_split(split)? {
            SplitKind::Train => &self.inner.train,
            SplitKind::Test => &self.inner.test,
        };
        let d = self.inner.features();
        Ok((
            ws.iter().map(|w| w.x.chunks(d).map(|r| r.to_vec()).collect()).collect(),
            ws.iter().map(|w| w.y).collect(),
        ))
    }

    fn descriptor_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.descriptor()).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn parse_split(split: &str) -> PyResult<SplitKind> {
    match split {
        "train" => Ok(SplitKind::Train),
        "test" => Ok(SplitKind::Test),
        other => Err(PyValueError::new_err(format!("split must be train or test, not `{other}`"))),
    }
}

/// Outcome of a training run.
#[pyclass(name = "RunReport", module = "ctlnet")]
struct PyRunReport {
    inner: training::RunReport,
}

#[pymethods]
impl PyRunReport {
    #[getter]
    fn epoch_losses(&self) -> Vec<f64> {
        self.inner.epoch_losses.clone()
    }

    #[getter]
    fn train_mae(&self) -> f64 {
        self.inner.train_mae
    }

    #[getter]
    fn test_mae(&self) -> Option<f64> {
        self.inner.test_mae
    }

    #[getter]
    fn test_r2(&self) -> Option<f64> {
        self.inner.test_r2
    }

    #[getter]
    fn params(&self) -> usize {
        self.inner.params
    }

    #[getter]
    fn seconds(&self) -> f64 {
        self.inner.seconds
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    fn csv_row(&self) -> String {
        self.inner.csv_row()
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    fn __repr__(&self) -> String {
        format!("RunReport({})", self.inner.summary())
    }
}

/// Trains `model` in place with SGD and momentum.
#[pyfunction]
#[pyo3(signature = (model, dataset, epochs = 100, batch_size = 32, lr = 0.01, momentum = 0.9, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    model: &mut PyModel,
    dataset: &PyDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    seed: u64,
) -> PyResult<PyRunReport> {
    let options = TrainOptions {
        epochs,
        batch_size,
        lr,
        momentum,
        seed,
    };
    let inner = &mut model.inner;
    let ds = &dataset.inner;
    let report = py.detach(|| training::train(inner, ds, &options)).py_err()?;
    Ok(PyRunReport { inner: report })
}

/// `(mae, r2)` on one split; `r2` is None when the targets are constant.
#[pyfunction]
#[pyo3(signature = (model, dataset, split = "test"))]
fn evaluate(model: &PyModel, dataset: &PyDataset, split: &str) -> PyResult<(f64, Option<f64>)> {
    match training::evaluate_split(&model.inner, &dataset.inner, parse_split(split)?) {
        Ok(m) => Ok((m.mae, Some(m.r2))),
        Err(ctlnet::Error::UndefinedR2 { mae }) => Ok((mae, None)),
        Err(e) => Err(to_py(e)),
    }
}

/// `(passed, report_text)` from finite-difference gradient checking.
#[pyfunction]
#[pyo3(signature = (model, seed = 0))]
fn gradcheck(model: &PyModel, seed: u64) -> PyResult<(bool, String)> {
    let options = GradcheckOptions {
        seed,
        ..GradcheckOptions::default()
    };
    let report = check::gradcheck(&model.inner, &options).py_err()?;
    Ok((report.passed(), report.to_string()))
}

/// Trains every config on `dataset` and returns the Markdown report.
#[pyfunction]
#[pyo3(signature = (configs, dataset, epochs = 100, batch_size = 32, lr = 0.01, momentum = 0.9, seed = 0, jobs = 1))]
#[allow(clippy::too_many_arguments)]
fn compare(
    py: Python<'_>,
    configs: Vec<PyModelConfig>,
    dataset: &PyDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    seed: u64,
    jobs: usize,
) -> PyResult<String> {
    let configs: Vec<models::ModelConfig> = configs.into_iter().map(|c| c.inner).collect();
    let options = TrainOptions {
        epochs,
        batch_size,
        lr,
        momentum,
        seed,
    };
    let ds = &dataset.inner;
    py.detach(|| {
        let cmp = training::compare(&configs, ds, &options, jobs)?;
        training::markdown_report(&[cmp])
    })
    .py_err()
}

#[pymodule]
#[pyo3(name = "ctlnet")]
fn ctlnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySeriesFrame>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRunReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("ARCHITECTURES", Architecture::ALL.map(|a| a.name()).to_vec())?;
    Ok(())
}
