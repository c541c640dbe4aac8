//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any hard criterion fails.

mod common;

use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracles::{self, Mat};
use ctlnet::autograd::{Tape, Tensor, LAYERNORM_EPS};
use ctlnet::data::{make_windows, synth_series, Dataset, DatasetSpec, NormStats, Split, SynthKind, SynthParams};
use ctlnet::gradcheck::{gradcheck, GradcheckOptions};
use ctlnet::layers::ParamStore;
use ctlnet::models::{write_checkpoint, Architecture, Model, ModelConfig};
use ctlnet::training::{self, compare, train, train_observed, OptimizerState, TrainOptions};

const GRAD_LAYER_TOL: f64 = 1e-5;
const GRAD_END_TO_END_TOL: f64 = 1e-3;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET_SECS: f64 = 60.0;
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_TRIALS: usize = 100;
const OPTIMIZER_TOL: f64 = 1e-12;
const CONVERGENCE_MAE: f64 = 0.02;
const CONVERGENCE_MAX_EPOCHS: usize = 500;
const CONVERGENCE_BUDGET_SECS: f64 = 300.0;
const SINE_ROWS: usize = 2000;
const ABLATION_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ABLATION_EPOCHS: usize = 20;
const TABLE1_ROWS: usize = 11616;
const TABLE1_WINDOWS: usize = 11611;
const ROUND_TRIP_TOL: f64 = 1e-12;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn to_mat(values: &[f64], cols: usize) -> Mat {
    values.chunks(cols).map(|r| r.to_vec()).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn sine_dataset(rows: usize, seed: u64) -> Dataset {
    let frame = synth_series(SynthKind::Sine, rows, 6, seed, &SynthParams::default()).unwrap();
    Dataset::build(&frame, &DatasetSpec::default(), "sine").unwrap()
}

fn gradient_fidelity() -> Verdict {
    let started = Instant::now();
    let options = GradcheckOptions {
        epsilon: GRAD_STEP,
        tolerance: GRAD_END_TO_END_TOL,
        ..GradcheckOptions::default()
    };
    let mut worst_layer = 0.0f64;
    let mut worst_e2e = 0.0f64;
    for arch in Architecture::ALL {
        let model = Model::build(&ModelConfig::tiny(arch).with_seed(1)).unwrap();
        let report = gradcheck(&model, &options).unwrap();
        worst_layer = worst_layer.max(report.max_layer_error());
        worst_e2e = worst_e2e.max(report.end_to_end.max_rel_error);
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst_layer <= GRAD_LAYER_TOL && worst_e2e <= GRAD_END_TO_END_TOL && secs < GRAD_BUDGET_SECS,
        format!(
            "max per-layer rel err {worst_layer:.2e} (<= {GRAD_LAYER_TOL:e}), \
             end-to-end {worst_e2e:.2e} (<= {GRAD_END_TO_END_TOL:e}), {secs:.1}s (< {GRAD_BUDGET_SECS}s)"
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = [0.0f64; 7];
    for _ in 0..ORACLE_TRIALS {
        // conv1d
        let (n, d, c, k) = (rng.gen_range(3..9), rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
        let stride = rng.gen_range(1..3);
        let (x, w, b) = (uniform(&mut rng, n * d, -1.0, 1.0), uniform(&mut rng, c * d * k, -1.0, 1.0), uniform(&mut rng, c, -1.0, 1.0));
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![1, n, d], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(vec![c, d, k], w.clone()).unwrap());
        let bv = tape.constant(Tensor::vector(b.clone()));
        let out = tape.conv1d(xv, wv, bv, stride).unwrap();
        let expected = oracles::conv1d(&to_mat(&x, d), &w, &b, k, stride);
        worst[0] = worst[0].max(max_abs_diff(tape.value(out).values(), &flat(&expected)));

        // single-head attention
        let (m, dh) = (rng.gen_range(1..6), rng.gen_range(1..5));
        let (q, kk, v) = (uniform(&mut rng, m * dh, -2.0, 2.0), uniform(&mut rng, m * dh, -2.0, 2.0), uniform(&mut rng, m * dh, -2.0, 2.0));
        let mut tape = Tape::new();
        let qv = tape.constant(Tensor::new(vec![1, m, dh], q.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![1, m, dh], kk.clone()).unwrap());
        let vv = tape.constant(Tensor::new(vec![1, m, dh], v.clone()).unwrap());
        let kt = tape.transpose(kv).unwrap();
        let scores = tape.batch_matmul(qv, kt).unwrap();
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax_rows(scores);
        let out = tape.batch_matmul(weights, vv).unwrap();
        let (eo, ew) = oracles::attention(&to_mat(&q, dh), &to_mat(&kk, dh), &to_mat(&v, dh));
        worst[1] = worst[1]
            .max(max_abs_diff(tape.value(out).values(), &flat(&eo)))
            .max(max_abs_diff(tape.value(weights).values(), &flat(&ew)));

        // lstm_step
        let (input, hidden) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let mut store = ParamStore::new();
        let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
        let cell = ctlnet::layers::LstmCell::new(&mut store, "cell", input, hidden, &mut init);
        for p in store.iter_mut() {
            p.tensor.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let (x, h, c) = (uniform(&mut rng, input, -1.0, 1.0), uniform(&mut rng, hidden, -1.0, 1.0), uniform(&mut rng, hidden, -1.0, 1.0));
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let xv = tape.constant(Tensor::matrix(1, input, x.clone()).unwrap());
        let hv = tape.constant(Tensor::matrix(1, hidden, h.clone()).unwrap());
        let cv = tape.constant(Tensor::matrix(1, hidden, c.clone()).unwrap());
        let (h1, c1) = cell.step(&mut tape, &bound, xv, hv, cv).unwrap();
        let get = |id| store.get(id).tensor.values().to_vec();
        let (eh, ec) = oracles::lstm_step(&x, &h, &c, &get(cell.w), &get(cell.u), &get(cell.b));
        worst[2] = worst[2]
            .max(max_abs_diff(tape.value(h1).values(), &eh))
            .max(max_abs_diff(tape.value(c1).values(), &ec));

        // softmax and layernorm
        let cols = rng.gen_range(1..9);
        let row = uniform(&mut rng, cols, -10.0, 10.0);
        let (gain, bias) = (uniform(&mut rng, cols, -2.0, 2.0), uniform(&mut rng, cols, -2.0, 2.0));
        let mut tape = Tape::new();
        let rv = tape.constant(Tensor::matrix(1, cols, row.clone()).unwrap());
        let gv = tape.constant(Tensor::vector(gain.clone()));
        let bv = tape.constant(Tensor::vector(bias.clone()));
        let sm = tape.softmax_rows(rv);
        let ln = tape.layernorm(rv, gv, bv, LAYERNORM_EPS).unwrap();
        worst[3] = worst[3].max(max_abs_diff(tape.value(sm).values(), &oracles::softmax(&row)));
        let expected = oracles::layernorm(&row, &gain, &bias, LAYERNORM_EPS);
        worst[4] = worst[4].max(max_abs_diff(tape.value(ln).values(), &expected));

        // metrics
        let len = rng.gen_range(2..50);
        let (pred, target) = (uniform(&mut rng, len, -0.5, 1.5), uniform(&mut rng, len, 0.0, 1.0));
        worst[5] = worst[5].max((training::mae(&pred, &target) - oracles::mae(&pred, &target)).abs());
        worst[6] = worst[6].max((training::r2(&pred, &target).unwrap() - oracles::r2(&pred, &target)).abs());
    }
    let names = ["conv1d", "attention", "lstm_step", "softmax", "layernorm", "mae", "r2"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        worst.iter().all(|w| *w <= ORACLE_TOL),
        format!("{ORACLE_TRIALS} trials each, max abs diff: {detail} (<= {ORACLE_TOL:e})"),
    )
}

fn shape_contract() -> Verdict {
    let model = Model::build(&ModelConfig::new(Architecture::Ctlnet)).unwrap();
    let nodes = model.encoder_tokens();
    let conv = model.conv().unwrap();
    let m = conv.output_len(model.config().window).unwrap();
    verdict(
        nodes == Some(3) && m == 3 && conv.kernel_size == 3 && conv.stride == 1,
        format!("window 5, kernel 3, stride 1 -> {m} conv outputs, encoder tokens {nodes:?}"),
    )
}

fn optimizer_exactness() -> Verdict {
    let (a, lr, mu, p0) = (1.0, 0.01, 0.9, 1.0);
    let trace = 1.0 - lr * a + mu;
    let disc = Complex64::new(trace * trace - 4.0 * mu, 0.0).sqrt();
    let (l1, l2) = ((trace + disc) / 2.0, (trace - disc) / 2.0);
    let p1 = (1.0 - lr * a) * p0;
    let c2 = (Complex64::new(p1, 0.0) - l1 * p0) / (l2 - l1);
    let c1 = Complex64::new(p0, 0.0) - c2;

    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::vector(vec![p0]));
    let mut opt = OptimizerState::new(lr, mu).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=100 {
        let p = store.get(id).tensor.values()[0];
        store.get_mut(id).tensor.grad = Some(vec![a * p]);
        opt.step(&mut store).unwrap();
        let closed = c1 * l1.powi(k) + c2 * l2.powi(k);
        worst = worst.max((store.get(id).tensor.values()[0] - closed.re).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut plain = ParamStore::new();
    let id = plain.add("p", Tensor::vector(uniform(&mut rng, 8, -1.0, 1.0)));
    let mut reference = plain.get(id).tensor.values().to_vec();
    let mut opt = OptimizerState::new(0.05, 0.0).unwrap();
    let mut bitwise = true;
    for _ in 0..100 {
        let g = uniform(&mut rng, 8, -3.0, 3.0);
        plain.get_mut(id).tensor.grad = Some(g.clone());
        opt.step(&mut plain).unwrap();
        for (r, g) in reference.iter_mut().zip(&g) {
            *r -= 0.05 * g;
        }
        bitwise &= plain.get(id).tensor.values().iter().zip(&reference).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    verdict(
        worst <= OPTIMIZER_TOL && bitwise,
        format!("100-step momentum recursion max err {worst:.1e} (<= {OPTIMIZER_TOL:e}); mu=0 bitwise equal: {bitwise}"),
    )
}

fn convergence() -> Verdict {
    let started = Instant::now();
    let ds = sine_dataset(SINE_ROWS, 1);
    let mut model = Model::build(&ModelConfig::new(Architecture::Ctlnet).with_seed(1)).unwrap();
    let options = TrainOptions {
        epochs: CONVERGENCE_MAX_EPOCHS,
        seed: 1,
        ..TrainOptions::default()
    };
    let mut reached = None;
    let report = train_observed(&mut model, &ds, &options, |e, m| {
        let mae = training::evaluate(m, &ds.train).unwrap().mae;
        if mae < CONVERGENCE_MAE {
            reached = Some((e.epoch, mae));
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    let detail = match reached {
        Some((epoch, mae)) => format!("train MAE {mae:.4} < {CONVERGENCE_MAE} at epoch {epoch}"),
        None => format!("train MAE {:.4} after {CONVERGENCE_MAX_EPOCHS} epochs", report.train_mae),
    };
    verdict(
        reached.is_some() && report.train_mae < CONVERGENCE_MAE && secs < CONVERGENCE_BUDGET_SECS,
        format!("sine T={SINE_ROWS} D=6 lr 0.01 momentum 0.9: {detail}, {secs:.1}s (< {CONVERGENCE_BUDGET_SECS}s)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_ordering() -> Verdict {
    let ds = sine_dataset(SINE_ROWS, 1);
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut maes: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for seed in ABLATION_SEEDS {
        let configs: Vec<ModelConfig> =
            Architecture::ALL.iter().map(|a| ModelConfig::new(*a).with_seed(seed)).collect();
        let options = TrainOptions {
            epochs: ABLATION_EPOCHS,
            seed,
            ..TrainOptions::default()
        };
        let cmp = compare(&configs, &ds, &options, jobs).unwrap();
        for (slot, run) in maes.iter_mut().zip(&cmp.runs) {
            slot.push(run.report.as_ref().and_then(|r| r.test_mae).unwrap_or(f64::INFINITY));
        }
    }
    let med: Vec<f64> = maes.into_iter().map(median).collect();
    let [ctl, lstm, cnn, tcl] = [med[0], med[1], med[2], med[3]];
    let ctl_beats_cnn = ctl <= cnn;
    let tcl_worst = tcl >= ctl && tcl >= lstm && tcl >= cnn;
    verdict(
        ctl_beats_cnn && tcl_worst,
        format!(
            "median test MAE over {} seeds, {ABLATION_EPOCHS} epochs: CTLNet {ctl:.4}, LSTM {lstm:.4}, \
             CNN-LSTM {cnn:.4}, TCLNet {tcl:.4}; CTLNet <= CNN-LSTM: {ctl_beats_cnn}; TCLNet worst: {tcl_worst}",
            ABLATION_SEEDS.len()
        ),
    )
}

fn data_pipeline() -> Verdict {
    let frame = synth_series(SynthKind::Ar1, TABLE1_ROWS, 6, 7, &SynthParams::default()).unwrap();
    let close = frame.column_index("close").unwrap();
    let windows = make_windows(&frame, 5, 1, 1, close).unwrap().len();

    let spec = DatasetSpec {
        split: Split::Row(9000),
        ..DatasetSpec::default()
    };
    let full = Dataset::build(&frame, &spec, "full").unwrap();
    let truncated = Dataset::build(&frame.head(9000), &spec, "truncated").unwrap();
    let no_leak = full.stats == truncated.stats && full.train == truncated.train && truncated.test.is_empty();

    let stats = NormStats::fit(&frame, frame.len()).unwrap();
    let back = stats.denormalize(&stats.normalize(&frame));
    let d = frame.width();
    let worst = frame
        .values
        .iter()
        .zip(&back.values)
        .enumerate()
        .map(|(i, (a, b))| {
            let j = i % d;
            let scale = stats.min[j].abs().max(stats.max[j].abs()).max(a.abs()).max(1.0);
            (a - b).abs() / scale
        })
        .fold(0.0, f64::max);
    verdict(
        windows == TABLE1_WINDOWS && no_leak && worst <= ROUND_TRIP_TOL,
        format!(
            "T={TABLE1_ROWS} -> {windows} windows (want {TABLE1_WINDOWS}); test-row deletion leaves train \
             windows and stats identical: {no_leak}; round-trip err {worst:.1e} (<= {ROUND_TRIP_TOL:e}, feature-scaled)"
        ),
    )
}

fn determinism() -> Verdict {
    let ds = sine_dataset(300, 3);
    let run = || {
        let mut model = Model::build(&ModelConfig::tiny(Architecture::Ctlnet).with_seed(3)).unwrap();
        let options = TrainOptions {
            epochs: 3,
            seed: 3,
            ..TrainOptions::default()
        };
        let mut report = train(&mut model, &ds, &options).unwrap();
        report.seconds = 0.0;
        let mut ckpt = Vec::new();
        write_checkpoint(&model, &mut ckpt).unwrap();
        (report.to_json().unwrap(), ckpt)
    };
    let (ra, ca) = run();
    let (rb, cb) = run();
    verdict(
        ra == rb && ca == cb,
        format!(
            "report metric fields identical: {}; checkpoints byte-identical: {} ({} bytes)",
            ra == rb,
            ca == cb,
            ca.len()
        ),
    )
}

fn hand_count(c: &ModelConfig) -> usize {
    let (n, d, w, h, k) = (c.window, c.features, c.d_model, c.lstm_hidden, c.kernel);
    let conv = w * d * k + w;
    let encoder = |width: usize| {
        let ff = c.ff_multiplier * width;
        4 * width + 4 * (width * width + width) + (width * ff + ff) + (ff * width + width)
    };
    let bilstm = |input: usize| 2 * 4 * h * (input + h + 1);
    let output = 2 * h * c.target_dim + c.target_dim;
    let nodes = (n - k) / c.stride + 1;
    match c.architecture {
        Architecture::Ctlnet => conv + nodes * w + c.encoder_layers * encoder(w) + bilstm(w) + output,
        Architecture::Lstm => bilstm(d) + output,
        Architecture::CnnLstm => conv + bilstm(w) + output,
        Architecture::Tclnet => n * d + c.encoder_layers * encoder(d) + conv + bilstm(w) + output,
    }
}

fn parameter_counting() -> Verdict {
    let bases = [
        ModelConfig::default(),
        ModelConfig::tiny(Architecture::Ctlnet),
        ModelConfig {
            d_model: 12,
            heads: 3,
            lstm_hidden: 7,
            encoder_layers: 2,
            window: 9,
            kernel: 4,
            stride: 2,
            features: 4,
            raw_heads: 4,
            ..ModelConfig::default()
        },
    ];
    let mut mismatches = Vec::new();
    for base in &bases {
        for arch in Architecture::ALL {
            let cfg = ModelConfig {
                architecture: arch,
                ..base.clone()
            };
            let got = Model::build(&cfg).unwrap().count_params();
            if got != hand_count(&cfg) {
                mismatches.push(format!("{arch}: {got} vs {}", hand_count(&cfg)));
            }
        }
    }

    let ds = sine_dataset(120, 0);
    let configs: Vec<ModelConfig> = Architecture::ALL.iter().map(|a| ModelConfig::tiny(*a)).collect();
    let options = TrainOptions {
        epochs: 1,
        ..TrainOptions::default()
    };
    let table = compare(&configs, &ds, &options, 1).unwrap().table2_markdown();
    let lines: Vec<&str> = table.lines().collect();
    let first_cells: Vec<&str> = lines
        .iter()
        .map(|l| l.trim_start_matches("| ").split(" |").next().unwrap_or(""))
        .collect();
    let layout_ok = lines.len() == 5
        && lines[0] == "| Models | CTLNet | LSTM | CNN-LSTM | TCLNet |"
        && first_cells[2..] == ["Parameters", "Train Time", "Train MAE"];
    verdict(
        mismatches.is_empty() && layout_ok,
        format!(
            "closed form matches at {} configs x 4 architectures ({} mismatches); \
             table layout Models | CTLNet | LSTM | CNN-LSTM | TCLNet with rows Parameters / Train Time / Train MAE: {layout_ok}",
            bases.len(),
            mismatches.len()
        ),
    )
}

fn main() {
    // (name, check, hard): soft checks are expected-trend experiments whose
    // failure is reported but does not fail the suite.
    let checks: [(&str, fn() -> Verdict, bool); 9] = [
        ("gradient-fidelity", gradient_fidelity, true),
        ("oracle-equivalence", oracle_equivalence, true),
        ("shape-contract", shape_contract, true),
        ("optimizer-exactness", optimizer_exactness, true),
        ("convergence", convergence, true),
        ("ablation-ordering", ablation_ordering, false),
        ("data-pipeline", data_pipeline, true),
        ("determinism", determinism, true),
        ("parameter-counting", parameter_counting, true),
    ];
    let mut hard_failures = 0;
    for (name, check, hard) in checks {
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        let tag = if v.passed { "PASS" } else { "FAIL" };
        let note = if !v.passed && !hard { " [expected-trend check, waiver recorded]" } else { "" };
        println!("{tag} {name}: {}{note}", v.detail);
        if !v.passed && hard {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}
