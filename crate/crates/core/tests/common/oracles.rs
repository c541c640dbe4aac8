//! Naive scalar-loop reference implementations used as test oracles.
//!
//! Everything here works on plain nested vectors and shares no code with the
//! tape-based implementation.
#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `w` laid out `[C][D][k]`.
pub fn conv1d(x: &Mat, w: &[f64], b: &[f64], k: usize, stride: usize) -> Mat {
    let n = x.len();
    let d = x[0].len();
    let c = b.len();
    let m = (n - k) / stride + 1;
    let mut out = vec![vec![0.0; c]; m];
    for i in 0..m {
        for ch in 0..c {
            let mut acc = b[ch];
            for j in 0..k {
                for dd in 0..d {
                    acc += w[ch * d * k + dd * k + j] * x[i * stride + j][dd];
                }
            }
            out[i][ch] = acc;
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn layernorm(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    row.iter()
        .enumerate()
        .map(|(j, v)| gain[j] * (v - mean) / (var + eps).sqrt() + bias[j])
        .collect()
}

/// `w` laid out `[in][out]`.
pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum::<f64>())
        .collect()
}

/// Single-head scaled dot-product attention without projections.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let dh = q[0].len() as f64;
    let mut weights = Vec::new();
    let mut out = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt())
            .collect();
        let w = softmax(&scores);
        let mut o = vec![0.0; v[0].len()];
        for (wj, vj) in w.iter().zip(v) {
            for (oo, vv) in o.iter_mut().zip(vj) {
                *oo += wj * vv;
            }
        }
        weights.push(w);
        out.push(o);
    }
    (out, weights)
}

pub struct EncoderWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub heads: usize,
}

impl EncoderWeights {
    pub fn from_lookup(get: &dyn Fn(&str) -> Vec<f64>, prefix: &str, heads: usize) -> Self {
        let g = |s: &str| get(&format!("{prefix}.{s}"));
        Self {
            ln1_g: g("ln_attn.gain"),
            ln1_b: g("ln_attn.bias"),
            wq: g("query.weight"),
            bq: g("query.bias"),
            wk: g("key.weight"),
            bk: g("key.bias"),
            wv: g("value.weight"),
            bv: g("value.bias"),
            wo: g("out.weight"),
            bo: g("out.bias"),
            ln2_g: g("ln_mlp.gain"),
            ln2_b: g("ln_mlp.bias"),
            w1: g("mlp_in.weight"),
            b1: g("mlp_in.bias"),
            w2: g("mlp_out.weight"),
            b2: g("mlp_out.bias"),
            heads,
        }
    }
}

pub fn encoder(n: &Mat, p: &EncoderWeights, eps: f64) -> Mat {
    let d = n[0].len();
    let dh = d / p.heads;
    let a: Mat = n.iter().map(|r| layernorm(r, &p.ln1_g, &p.ln1_b, eps)).collect();
    let q: Mat = a.iter().map(|r| affine(r, &p.wq, &p.bq)).collect();
    let k: Mat = a.iter().map(|r| affine(r, &p.wk, &p.bk)).collect();
    let v: Mat = a.iter().map(|r| affine(r, &p.wv, &p.bv)).collect();
    let mut ctx = vec![vec![0.0; d]; n.len()];
    for h in 0..p.heads {
        let cut = |m: &Mat| -> Mat { m.iter().map(|r| r[h * dh..(h + 1) * dh].to_vec()).collect() };
        let (o, _) = attention(&cut(&q), &cut(&k), &cut(&v));
        for (row, orow) in ctx.iter_mut().zip(&o) {
            row[h * dh..(h + 1) * dh].copy_from_slice(orow);
        }
    }
    let m: Mat = ctx
        .iter()
        .zip(n)
        .map(|(c, r)| affine(c, &p.wo, &p.bo).iter().zip(r).map(|(a, b)| a + b).collect())
        .collect();
    m.iter()
        .map(|r| {
            let b = layernorm(r, &p.ln2_g, &p.ln2_b, eps);
            let hid: Vec<f64> = affine(&b, &p.w1, &p.b1).iter().map(|v| v.max(0.0)).collect();
            affine(&hid, &p.w2, &p.b2).iter().zip(r).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// One LSTM step with per-gate scalar loops. `w` is `[4H][in]`, `u` `[4H][H]`,
/// gate blocks ordered forget, input, candidate, output.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], w: &[f64], u: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hs = h.len();
    let ins = x.len();
    let pre = |gate: usize, j: usize| {
        let row = gate * hs + j;
        let mut acc = b[row];
        for i in 0..ins {
            acc += w[row * ins + i] * x[i];
        }
        for i in 0..hs {
            acc += u[row * hs + i] * h[i];
        }
        acc
    };
    let mut h_new = vec![0.0; hs];
    let mut c_new = vec![0.0; hs];
    for j in 0..hs {
        let f = sigmoid(pre(0, j));
        let i = sigmoid(pre(1, j));
        let g = pre(2, j).tanh();
        let o = sigmoid(pre(3, j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

pub struct CellWeights {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

impl CellWeights {
    pub fn from_lookup(get: &dyn Fn(&str) -> Vec<f64>, prefix: &str) -> Self {
        Self {
            w: get(&format!("{prefix}.w")),
            u: get(&format!("{prefix}.u")),
            b: get(&format!("{prefix}.b")),
        }
    }

    fn hidden(&self) -> usize {
        self.b.len() / 4
    }
}

pub fn bilstm(seq: &Mat, fwd: &CellWeights, bwd: &CellWeights) -> Vec<f64> {
    let run = |cell: &CellWeights, order: Vec<usize>| {
        let hs = cell.hidden();
        let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
        for t in order {
            (h, c) = lstm_step(&seq[t], &h, &c, &cell.w, &cell.u, &cell.b);
        }
        h
    };
    let mut v = run(fwd, (0..seq.len()).collect());
    v.extend(run(bwd, (0..seq.len()).rev().collect()));
    v
}

/// Forward pass of a full architecture for one window, parameters looked up
/// by name.
pub fn model_forward(
    arch: &str,
    x: &Mat,
    get: &dyn Fn(&str) -> Vec<f64>,
    kernel: usize,
    stride: usize,
    heads: usize,
    raw_heads: usize,
    encoder_layers: usize,
    eps: f64,
) -> Vec<f64> {
    let add_pos = |m: &Mat| -> Mat {
        let table = get("pos.table");
        let w = m[0].len();
        m.iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().map(|(j, v)| v + table[i * w + j]).collect())
            .collect()
    };
    let conv = |m: &Mat| conv1d(m, &get("conv.weight"), &get("conv.bias"), kernel, stride);
    let encode = |mut m: Mat, h: usize| {
        for i in 0..encoder_layers {
            m = encoder(&m, &EncoderWeights::from_lookup(get, &format!("encoder{i}"), h), eps);
        }
        m
    };
    let seq = match arch {
        "ctlnet" => encode(add_pos(&conv(x)), heads),
        "lstm" => x.clone(),
        "cnn_lstm" => conv(x),
        "tclnet" => conv(&encode(add_pos(x), raw_heads)),
        other => panic!("unknown arch {other}"),
    };
    let v = bilstm(
        &seq,
        &CellWeights::from_lookup(get, "bilstm.fwd"),
        &CellWeights::from_lookup(get, "bilstm.bwd"),
    );
    affine(&v, &get("output.weight"), &get("output.bias"))
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        total += (pred[i] - target[i]).abs();
    }
    total / pred.len() as f64
}

pub fn r2(pred: &[f64], target: &[f64]) -> f64 {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..target.len() {
        ss_res += (target[i] - pred[i]).powi(2);
        ss_tot += (target[i] - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}
