//! Reverse-mode recording of tensor operations.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its inputs. Node ids grow monotonically, so walking the tape backwards
//! visits each node after all of its consumers.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Local derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Coarse classification of recorded ops, used to target fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Mul,
    Scale,
    MatMul,
    BatchMatMul,
    Transpose,
    Activation,
    Softmax,
    LayerNorm,
    Mse,
    Sum,
    Slice,
    Concat,
    Select,
    Conv1d,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var },
    TransposeLast2 { a: Var },
    Unary { a: Var, f: Activation },
    SoftmaxRows { a: Var },
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Mse { pred: Var, target: Var },
    Sum { a: Var },
    SliceLast { a: Var, start: usize },
    ConcatLast { parts: Vec<Var> },
    SelectAxis1 { a: Var, index: usize },
    Conv1d { x: Var, w: Var, b: Var, stride: usize },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::BatchMatMul { .. } => OpKind::BatchMatMul,
            Op::TransposeLast2 { .. } => OpKind::Transpose,
            Op::Unary { .. } => OpKind::Activation,
            Op::SoftmaxRows { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Mse { .. } => OpKind::Mse,
            Op::Sum { .. } => OpKind::Sum,
            Op::SliceLast { .. } => OpKind::Slice,
            Op::ConcatLast { .. } => OpKind::Concat,
            Op::SelectAxis1 { .. } => OpKind::Select,
            Op::Conv1d { .. } => OpKind::Conv1d,
        })
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes and gradients.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// Test hook: scales the backward output of every op of `kind` by 1.5.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    /// Records a leaf. It receives a gradient iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let needs_grad = tensor.requires_grad;
        let mut value = tensor.clone();
        value.grad = None;
        self.push(value, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn record(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.needs(inputs);
        let value = Tensor::new(shape, values).expect("op produced consistent shape");
        self.push(value, op, needs_grad)
    }

    /// Elementwise sum. `b` may match `a` exactly or match a trailing
    /// suffix of `a`'s shape, in which case it is broadcast over the
    /// leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!("cannot add {sb:?} onto {sa:?}")));
        }
        let bv = self.vals(b);
        let inner = bv.len();
        let values = self
            .vals(a)
            .chunks(inner)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        Ok(self.record(sa, values, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul shape mismatch {sa:?} vs {:?}",
                self.shape(b)
            )));
        }
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.record(sa, values, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let shape = self.shape(a).to_vec();
        let values = self.vals(a).iter().map(|x| x * factor).collect();
        self.record(shape, values, Op::Scale { a, factor }, &[a])
    }

    /// Matrix product `a · b` where `b` is `[k, n]` and `a` is `[..., k]`;
    /// leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sb.len() != 2 || *sa.last().unwrap() != sb[0] {
            return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.vals(a).len() / k;
        let mut out = vec![0.0; m * n];
        gemm(self.vals(a), self.vals(b), m, k, n, &mut out);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.record(shape, out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched product `[B, m, k] · [B, k, n] -> [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("batch_matmul {sa:?} x {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.vals(a), self.vals(b));
        for i in 0..batch {
            gemm(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.record(vec![batch, m, n], out, Op::BatchMatMul { a, b }, &[a, b]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::Shape(format!("transpose needs rank >= 2, got {sa:?}")));
        }
        let (r, c) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let values = transpose_blocks(self.vals(a), r, c);
        let mut shape = sa;
        let len = shape.len();
        shape.swap(len - 2, len - 1);
        Ok(self.record(shape, values, Op::TransposeLast2 { a }, &[a]))
    }

    pub fn activation(&mut self, a: Var, f: Activation) -> Var {
        let shape = self.shape(a).to_vec();
        let values = self.vals(a).iter().map(|&x| f.apply(x)).collect();
        self.record(shape, values, Op::Unary { a, f }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().unwrap();
        let mut values = self.vals(a).to_vec();
        for row in values.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.record(shape, values, Op::SoftmaxRows { a }, &[a])
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layernorm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "layernorm over width {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::config("eps", "must be positive"));
        }
        let x = self.vals(a);
        let (g, bv) = (self.vals(gain), self.vals(bias));
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + bv[j];
            }
        }
        let op = Op::LayerNorm {
            a,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.record(shape, out, op, &[a, gain, bias]))
    }

    /// Mean of squared differences, as a one-element tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape(format!(
                "mse between {:?} and {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let p = self.vals(pred);
        let t = self.vals(target);
        let loss = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.record(vec![1], vec![loss], Op::Mse { pred, target }, &[pred, target]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.vals(a).iter().sum();
        self.record(vec![1], vec![total], Op::Sum { a }, &[a])
    }

    /// Columns `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().unwrap();
        if len == 0 || start + len > cols {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) out of last axis {cols}",
                start + len
            )));
        }
        let values = self
            .vals(a)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        Ok(self.record(out_shape, values, Op::SliceLast { a, start }, &[a]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::Shape(format!("concat leading axes {lead:?} vs {s:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                values.extend_from_slice(&self.vals(*p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.record(shape, values, Op::ConcatLast { parts: parts.to_vec() }, parts))
    }

    /// Picks position `index` along axis 1 of a `[B, M, C]` tensor.
    pub fn select_axis1(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || index >= s[1] {
            return Err(Error::Shape(format!("select index {index} on {s:?}")));
        }
        let (b, m, c) = (s[0], s[1], s[2]);
        let av = self.vals(a);
        let mut values = Vec::with_capacity(b * c);
        for i in 0..b {
            let off = (i * m + index) * c;
            values.extend_from_slice(&av[off..off + c]);
        }
        Ok(self.record(vec![b, c], values, Op::SelectAxis1 { a, index }, &[a]))
    }

    /// Valid 1-D cross-correlation over time.
    ///
    /// `x` is `[B, N, D]`, `w` is `[C, D, k]`, `b` is `[C]`; the result is
    /// `[B, M, C]` with `M = (N - k) / stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] || self.shape(b) != [sw[0]] {
            return Err(Error::Shape(format!(
                "conv1d input {sx:?} weight {sw:?} bias {:?}",
                self.shape(b)
            )));
        }
        let (batch, n, d) = (sx[0], sx[1], sx[2]);
        let (c, k) = (sw[0], sw[2]);
        if stride == 0 {
            return Err(Error::config("stride", "must be at least 1"));
        }
        if n < k {
            return Err(Error::config(
                "kernel",
                format!("kernel size {k} exceeds input length {n}"),
            ));
        }
        let m = (n - k) / stride + 1;
        let (xv, wv, bv) = (self.vals(x), self.vals(w), self.vals(b));
        let mut out = vec![0.0; batch * m * c];
        for bi in 0..batch {
            for i in 0..m {
                let o = &mut out[(bi * m + i) * c..(bi * m + i + 1) * c];
                for (ch, slot) in o.iter_mut().enumerate() {
                    let mut acc = bv[ch];
                    for j in 0..k {
                        let xrow = &xv[(bi * n + i * stride + j) * d..][..d];
                        for (dd, xval) in xrow.iter().enumerate() {
                            acc += wv[(ch * d + dd) * k + j] * xval;
                        }
                    }
                    *slot = acc;
                }
            }
        }
        Ok(self.record(vec![batch, m, c], out, Op::Conv1d { x, w, b, stride }, &[x, w, b]))
    }

    /// Propagates d(root)/d(.) back through the tape.
    ///
    /// Gradients accumulate additively across fan-out. Calling backward
    /// again discards the previous gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let mut contributions = self.local_backward(id, &g);
            if self.fault.is_some() && self.fault == self.nodes[id].op.kind() {
                for (_, delta) in contributions.iter_mut() {
                    delta.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (input, delta) in contributions {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn local_backward(&self, id: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[id];
        let out = node.value.values();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } => {
                let inner = self.vals(*b).len();
                let mut gb = vec![0.0; inner];
                for row in g.chunks(inner) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                let ga = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(av).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { a, factor } => vec![(*a, g.iter().map(|v| v * factor).collect())],
            Op::MatMul { a, b } => {
                let sb = self.shape(*b);
                let (k, n) = (sb[0], sb[1]);
                let av = self.vals(*a);
                let m = av.len() / k;
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                gemm_nt(g, self.vals(*b), m, n, k, &mut ga);
                gemm_tn(av, g, m, k, n, &mut gb);
                vec![(*a, ga), (*b, gb)]
            }
            Op::BatchMatMul { a, b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*b)[2];
                let (av, bv) = (self.vals(*a), self.vals(*b));
                let mut ga = vec![0.0; batch * m * k];
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..batch {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    gemm_nt(gi, &bv[i * k * n..][..k * n], m, n, k, &mut ga[i * m * k..][..m * k]);
                    gemm_tn(&av[i * m * k..][..m * k], gi, m, k, n, &mut gb[i * k * n..][..k * n]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::TransposeLast2 { a } => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                vec![(*a, transpose_blocks(g, r, c))]
            }
            Op::Unary { a, f } => {
                let x = self.vals(*a);
                let ga = g
                    .iter()
                    .zip(x.iter().zip(out))
                    .map(|(g, (&x, &y))| g * f.derivative(x, y))
                    .collect();
                vec![(*a, ga)]
            }
            Op::SoftmaxRows { a } => {
                let cols = node.value.last_dim();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(cols).zip(out.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dst[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gamma = self.vals(*gain);
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..d {
                        gbias[j] += gr[j];
                        gg[j] += gr[j] * hr[j];
                        dxhat[j] = gr[j] * gamma[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * hr[j];
                    }
                    let scale = inv / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = scale * (d as f64 * dxhat[j] - s1 - hr[j] * s2);
                    }
                }
                vec![(*a, gx), (*gain, gg), (*bias, gbias)]
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.vals(*pred), self.vals(*target));
                let c = 2.0 * g[0] / p.len() as f64;
                let gp: Vec<f64> = p.iter().zip(t).map(|(a, b)| c * (a - b)).collect();
                let gt = gp.iter().map(|v| -v).collect();
                vec![(*pred, gp), (*target, gt)]
            }
            Op::Sum { a } => vec![(*a, vec![g[0]; self.vals(*a).len()])],
            Op::SliceLast { a, start } => {
                let cols = self.value(*a).last_dim();
                let len = node.value.last_dim();
                let mut ga = vec![0.0; self.vals(*a).len()];
                for (dst, src) in ga.chunks_mut(cols).zip(g.chunks(len)) {
                    dst[*start..start + len].copy_from_slice(src);
                }
                vec![(*a, ga)]
            }
            Op::ConcatLast { parts } => {
                let total = node.value.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                let mut result = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.value(*p).last_dim();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    result.push((*p, gp));
                }
                result
            }
            Op::SelectAxis1 { a, index } => {
                let s = self.shape(*a);
                let (b, m, c) = (s[0], s[1], s[2]);
                let mut ga = vec![0.0; b * m * c];
                for i in 0..b {
                    let off = (i * m + index) * c;
                    ga[off..off + c].copy_from_slice(&g[i * c..(i + 1) * c]);
                }
                vec![(*a, ga)]
            }
            Op::Conv1d { x, w, b, stride } => {
                let sx = self.shape(*x);
                let (batch, n, d) = (sx[0], sx[1], sx[2]);
                let sw = self.shape(*w);
                let (c, k) = (sw[0], sw[2]);
                let m = node.value.shape()[1];
                let (xv, wv) = (self.vals(*x), self.vals(*w));
                let mut gx = vec![0.0; xv.len()];
                let mut gw = vec![0.0; wv.len()];
                let mut gb = vec![0.0; c];
                for bi in 0..batch {
                    for i in 0..m {
                        let go = &g[(bi * m + i) * c..][..c];
                        for (ch, &gv) in go.iter().enumerate() {
                            gb[ch] += gv;
                            for j in 0..k {
                                let row = (bi * n + i * stride + j) * d;
                                for dd in 0..d {
                                    let widx = (ch * d + dd) * k + j;
                                    gw[widx] += gv * xv[row + dd];
                                    gx[row + dd] += gv * wv[widx];
                                }
                            }
                        }
                    }
                }
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aval = a[i * k + p];
            if aval == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += aval * bv);
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
fn gemm_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn gemm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aval = a[i * k + p];
            if aval == 0.0 {
                continue;
            }
            out[p * n..(p + 1) * n]
                .iter_mut()
                .zip(grow)
                .for_each(|(o, gv)| *o += aval * gv);
        }
    }
}

fn transpose_blocks(v: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}
