use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};

use super::params::{Bindings, Layer, ParamId, ParamStore};

/// LSTM cell with a single bias vector.
///
/// `w` is `[4H, input]`, `u` is `[4H, H]` and `b` is `[4H]`; rows are laid
/// out as forget, input, candidate and output blocks of `H` each.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Transposed weights for a sequence of steps.
#[derive(Debug, Clone, Copy)]
pub struct PreparedCell {
    w_t: Var,
    u_t: Var,
    b: Var,
    hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let h = hidden_size;
        let w = store.uniform(
            format!("{prefix}.w"),
            &[4 * h, input_size],
            1.0 / (input_size as f64).sqrt(),
            rng,
        );
        let u = store.uniform(format!("{prefix}.u"), &[4 * h, h], 1.0 / (h as f64).sqrt(), rng);
        let b = store.constant(format!("{prefix}.b"), &[4 * h], 0.0);
        store.get_mut(b).tensor.values_mut()[..h]
            .iter_mut()
            .for_each(|v| *v = FORGET_BIAS_INIT);
        Self {
            input_size,
            hidden_size,
            w,
            u,
            b,
        }
    }

    pub fn prepare(&self, tape: &mut Tape, params: &Bindings) -> Result<PreparedCell> {
        Ok(PreparedCell {
            w_t: tape.transpose(params[self.w])?,
            u_t: tape.transpose(params[self.u])?,
            b: params[self.b],
            hidden: self.hidden_size,
        })
    }

    /// One recurrence step on `[B, input]`, `[B, H]`, `[B, H]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let prepared = self.prepare(tape, params)?;
        lstm_step(tape, &prepared, x, h_prev, c_prev)
    }
}

impl Layer for LstmCell {
    fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.u, self.b]
    }
}

/// `c = f*c_prev + i*g`, `h = o*tanh(c)` with sigmoid gates f, i, o and a
/// tanh candidate g.
pub fn lstm_step(
    tape: &mut Tape,
    cell: &PreparedCell,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let hsz = cell.hidden;
    let from_x = tape.matmul(x, cell.w_t)?;
    let from_h = tape.matmul(h_prev, cell.u_t)?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add(pre, cell.b)?;
    let f = tape.slice_last(pre, 0, hsz)?;
    let i = tape.slice_last(pre, hsz, hsz)?;
    let g = tape.slice_last(pre, 2 * hsz, hsz)?;
    let o = tape.slice_last(pre, 3 * hsz, hsz)?;
    let f = tape.sigmoid(f);
    let i = tape.sigmoid(i);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Two independent LSTM passes over the node sequence; the final hidden
/// states of both directions are concatenated into `[B, 2H]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let forward = LstmCell::new(store, &format!("{prefix}.fwd"), input_size, hidden_size, rng);
        let backward = LstmCell::new(store, &format!("{prefix}.bwd"), input_size, hidden_size, rng);
        Self { forward, backward }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden_size()
    }

    /// `l: [B, M, input] -> [B, 2H]`
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, l: Var) -> Result<Var> {
        let shape = tape.shape(l).to_vec();
        if shape.len() != 3 || shape[2] != self.forward.input_size {
            return Err(Error::Shape(format!(
                "bilstm expects [batch, steps, {}], got {shape:?}",
                self.forward.input_size
            )));
        }
        let (batch, steps) = (shape[0], shape[1]);
        if steps == 0 {
            return Err(Error::Size("bilstm over an empty sequence".into()));
        }
        let h_fwd = self.run(tape, params, &self.forward, l, batch, (0..steps).collect())?;
        let h_bwd = self.run(tape, params, &self.backward, l, batch, (0..steps).rev().collect())?;
        tape.concat_last(&[h_fwd, h_bwd])
    }

    fn run(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        cell: &LstmCell,
        l: Var,
        batch: usize,
        order: Vec<usize>,
    ) -> Result<Var> {
        let prepared = cell.prepare(tape, params)?;
        let zeros = crate::autograd::Tensor::zeros(&[batch, cell.hidden_size]);
        let mut h = tape.constant(zeros.clone());
        let mut c = tape.constant(zeros);
        for t in order {
            let x = tape.select_axis1(l, t)?;
            (h, c) = lstm_step(tape, &prepared, x, h, c)?;
        }
        Ok(h)
    }
}

impl Layer for BiLstm {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.forward.param_ids();
        ids.extend(self.backward.param_ids());
        ids
    }
}
