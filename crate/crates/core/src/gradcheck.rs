//! Finite-difference verification of every layer's backward pass.
//!
//! Each layer is checked in isolation: it receives a random input leaf and
//! the scalar loss is `sum(output * r)` for a fixed random `r`, so a wrong
//! backward in one layer cannot leak into another layer's verdict. A final
//! end-to-end check runs the whole model under MSE.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{conv_output_len, Bindings, ParamId, ParamStore};
use crate::models::{Architecture, Model};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Largest relative error that still passes.
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub batch: usize,
    pub seed: u64,
    /// Refuse models larger than this.
    pub max_params: usize,
    #[doc(hidden)]
    #[serde(skip)]
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-3,
            floor: 1e-4,
            batch: 2,
            seed: 0,
            max_params: 5000,
            fault: None,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: f64,
    /// Coordinate with the largest error, e.g. `bilstm.fwd.u[7]`.
    pub worst: String,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub architecture: Architecture,
    pub params: usize,
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
    pub end_to_end: LayerCheck,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed) && self.end_to_end.passed
    }

    pub fn failing_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.layer.as_str())
            .collect()
    }

    pub fn max_layer_error(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck {} ({} params, tolerance {:e})",
            self.architecture.display_name(),
            self.params,
            self.tolerance
        )?;
        for l in self.layers.iter().chain(std::iter::once(&self.end_to_end)) {
            writeln!(
                f,
                "  {:<12} {:>5} coords  max rel err {:.3e}  worst {:<24} {}",
                l.layer,
                l.checked,
                l.max_rel_error,
                l.worst,
                if l.passed { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Conv,
    Position,
    Encoder(usize),
    BiLstm,
    Output,
    Full,
}

impl Stage {
    fn from_group(name: &str) -> Stage {
        match name {
            "conv" => Stage::Conv,
            "pos" => Stage::Position,
            "bilstm" => Stage::BiLstm,
            "output" => Stage::Output,
            other => Stage::Encoder(
                other
                    .strip_prefix("encoder")
                    .and_then(|i| i.parse().ok())
                    .expect("layer groups are conv, pos, encoder<i>, bilstm, output"),
            ),
        }
    }

    fn input_shape(self, model: &Model, batch: usize) -> Result<Vec<usize>> {
        let cfg = model.config();
        Ok(match self {
            Stage::Full => vec![batch, cfg.window, cfg.features],
            Stage::Conv => {
                let conv = model.conv().expect("conv stage exists");
                vec![batch, cfg.window, conv.in_channels]
            }
            Stage::Position => {
                let pos = model.position().expect("position stage exists");
                vec![batch, pos.num_nodes, pos.width]
            }
            Stage::Encoder(i) => {
                let tokens = model.encoder_tokens().expect("encoder has tokens");
                vec![batch, tokens, model.encoders()[i].d_model]
            }
            Stage::BiLstm => {
                let len = match model.conv() {
                    Some(_) => conv_output_len(cfg.window, cfg.kernel, cfg.stride)?,
                    None => cfg.window,
                };
                vec![batch, len, model.bilstm().forward.input_size]
            }
            Stage::Output => vec![batch, model.output().in_features],
        })
    }

    fn forward(self, model: &Model, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        match self {
            Stage::Full => model.forward(tape, params, x),
            Stage::Conv => model.conv().expect("conv").forward(tape, params, x),
            Stage::Position => model.position().expect("pos").forward(tape, params, x),
            Stage::Encoder(i) => model.encoders()[i].forward(tape, params, x),
            Stage::BiLstm => model.bilstm().forward(tape, params, x),
            Stage::Output => model.output().forward(tape, params, x),
        }
    }
}

struct Probe<'a> {
    model: &'a Model,
    stage: Stage,
    /// Upstream weights for layer stages, targets for the full model.
    r: Tensor,
    fault: Option<OpKind>,
}

impl Probe<'_> {
    fn loss(&self, tape: &mut Tape, params: &Bindings, x: Var) -> Result<Var> {
        let out = self.stage.forward(self.model, tape, params, x)?;
        let r = tape.constant(self.r.clone());
        match self.stage {
            Stage::Full => tape.mse_loss(out, r),
            _ => {
                let weighted = tape.mul(out, r)?;
                Ok(tape.sum(weighted))
            }
        }
    }

    fn value(&self, store: &ParamStore, x: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let loss = self.loss(&mut tape, &bound, xv)?;
        Ok(tape.value(loss).values()[0])
    }

    /// Analytic gradients of `ids` and of the input.
    fn gradients(&self, store: &ParamStore, x: &Tensor, ids: &[ParamId]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.inject_backward_fault(kind);
        }
        let bound = store.bind(&mut tape);
        let xv = tape.leaf(&x.clone().with_grad());
        let loss = self.loss(&mut tape, &bound, xv)?;
        tape.backward(loss)?;
        let grad = |v: Var, n: usize| tape.grad(v).map_or_else(|| vec![0.0; n], |g| g.to_vec());
        let params = ids
            .iter()
            .map(|&id| grad(bound[id], store.get(id).tensor.len()))
            .collect();
        Ok((params, grad(xv, x.len())))
    }
}

struct Worst {
    err: f64,
    at: String,
    checked: usize,
}

impl Worst {
    fn new() -> Self {
        Self {
            err: 0.0,
            at: String::from("-"),
            checked: 0,
        }
    }

    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        // NaN compares false, so treat it as infinitely bad.
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > self.err || self.checked == 1 {
            self.err = err;
            self.at = at();
        }
    }
}

fn check_stage(
    model: &Model,
    stage: Stage,
    label: &str,
    ids: &[ParamId],
    options: &GradcheckOptions,
    rng: &mut impl Rng,
) -> Result<LayerCheck> {
    let shape = stage.input_shape(model, options.batch)?;
    let n: usize = shape.iter().product();
    let x = match stage {
        Stage::Full => Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())?,
        _ => Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?,
    };
    let out_shape = {
        let mut tape = Tape::new();
        let bound = model.params().bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let out = stage.forward(model, &mut tape, &bound, xv)?;
        tape.shape(out).to_vec()
    };
    let m: usize = out_shape.iter().product();
    let r = Tensor::new(out_shape, (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let probe = Probe {
        model,
        stage,
        r,
        fault: options.fault,
    };

    let mut store = model.params().clone();
    let (param_grads, input_grad) = probe.gradients(&store, &x, ids)?;
    let eps = options.epsilon;
    let mut worst = Worst::new();
    for (&id, analytic) in ids.iter().zip(&param_grads) {
        for (j, &a) in analytic.iter().enumerate() {
            let orig = store.get(id).tensor.values()[j];
            store.get_mut(id).tensor.values_mut()[j] = orig + eps;
            let plus = probe.value(&store, &x)?;
            store.get_mut(id).tensor.values_mut()[j] = orig - eps;
            let minus = probe.value(&store, &x)?;
            store.get_mut(id).tensor.values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let name = &store.get(id).name;
            worst.record(relative_error(a, numeric, options.floor), || format!("{name}[{j}]"));
        }
    }
    if !matches!(stage, Stage::Full) {
        let mut xp = x.clone();
        for (j, &a) in input_grad.iter().enumerate() {
            let orig = x.values()[j];
            xp.values_mut()[j] = orig + eps;
            let plus = probe.value(&store, &xp)?;
            xp.values_mut()[j] = orig - eps;
            let minus = probe.value(&store, &xp)?;
            xp.values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst.record(relative_error(a, numeric, options.floor), || format!("input[{j}]"));
        }
    }
    Ok(LayerCheck {
        layer: label.to_string(),
        max_rel_error: worst.err,
        worst: worst.at,
        checked: worst.checked,
        passed: worst.err <= options.tolerance,
    })
}

/// Compares analytic and central-difference gradients for every layer of
/// `model` and for the model as a whole.
pub fn gradcheck(model: &Model, options: &GradcheckOptions) -> Result<GradcheckReport> {
    let params = model.count_params();
    if params > options.max_params {
        return Err(Error::config(
            "model",
            format!(
                "gradcheck needs a tiny model (at most {} parameters), this one has {params}",
                options.max_params
            ),
        ));
    }
    if !(options.epsilon > 0.0) || options.batch == 0 {
        return Err(Error::config("epsilon", "epsilon and batch must be positive"));
    }
    let mut rng = substream(options.seed, Stream::Check);
    let mut layers = Vec::new();
    for (name, ids) in model.layer_groups() {
        let stage = Stage::from_group(&name);
        layers.push(check_stage(model, stage, &name, &ids, options, &mut rng)?);
    }
    let all: Vec<ParamId> = model.params().ids().collect();
    let end_to_end = check_stage(model, Stage::Full, "end_to_end", &all, options, &mut rng)?;
    Ok(GradcheckReport {
        architecture: model.architecture(),
        params,
        tolerance: options.tolerance,
        layers,
        end_to_end,
    })
}
