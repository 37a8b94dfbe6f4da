//! Recurrent crash classifiers: Simple RNN, LSTM and GRU layers (one or
//! two stacked), a dense sigmoid output, exact backpropagation through time
//! and Adam.
//!
//! All parameters live in one flat vector. Each recurrent layer stores its
//! input kernel (`d x G*H`), recurrent kernel (`H x G*H`) and bias (`G*H`)
//! contiguously, row-major, gate-major within a row. Gate order is
//! `i, f, g, o` for LSTM and `z, r, candidate` for GRU. The dense weights
//! (`H`) and bias (`1`) come last.
//!
//! Gate activations are sigmoid. The Simple RNN state and the LSTM/GRU
//! candidate and cell output use the configured activation (ReLU by
//! default). The GRU update is `h = (1 - z) * h_prev + z * candidate`.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation;
use crate::par;
use crate::windowing::{read_f64s, read_json_header, write_f64s, WindowError, WindowTensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"CWRN";
const CHECKPOINT_VERSION: u32 = 1;
const PROB_CLAMP: f64 = 1e-7;
/// Samples per gradient work unit. Fixed so the summation order never
/// depends on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("non-finite activation; training diverged")]
    NonFiniteActivation,
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<WindowError> for SeqError {
    fn from(e: WindowError) -> Self {
        match e {
            WindowError::Io(io) => SeqError::Io(io),
            other => SeqError::Checkpoint(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    #[default]
    Simple,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Simple, CellKind::Lstm, CellKind::Gru];

    pub fn gates(self) -> usize {
        match self {
            CellKind::Simple => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Simple => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the output `y = act(x)`. ReLU's
    /// subgradient at 0 is 0.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnHyper {
    pub cell: CellKind,
    pub neurons: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub l1: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
    pub min_delta: f64,
}

impl Default for RnnHyper {
    fn default() -> Self {
        Self {
            cell: CellKind::Simple,
            neurons: 32,
            layers: 1,
            learning_rate: 0.01,
            max_epochs: 50,
            patience: 10,
            l1: 1e-5,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
            activation: Activation::Relu,
            min_delta: 1e-6,
        }
    }
}

/// Borrowed `N x T x F` sequences with labels.
#[derive(Debug, Clone, Copy)]
pub struct Sequences<'a> {
    values: &'a [f64],
    labels: &'a [u8],
    timesteps: usize,
    features: usize,
}

impl<'a> Sequences<'a> {
    pub fn new(values: &'a [f64], labels: &'a [u8], timesteps: usize, features: usize) -> Result<Self, SeqError> {
        if values.len() != labels.len() * timesteps * features {
            return Err(SeqError::ShapeMismatch(format!(
                "{} values for {} samples of {timesteps}x{features}",
                values.len(),
                labels.len()
            )));
        }
        Ok(Self { values, labels, timesteps, features })
    }

    pub fn from_tensor(w: &'a WindowTensor) -> Self {
        Self { values: w.values(), labels: w.labels(), timesteps: w.timesteps(), features: w.features() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    pub fn sample(&self, i: usize) -> &'a [f64] {
        let s = self.timesteps * self.features;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    input: usize,
    wx: usize,
    wh: usize,
    b: usize,
    end: usize,
}

/// Per-layer activations cached by the forward pass.
struct LayerTrace {
    /// `(T+1) x H`, row 0 is the zero initial state.
    hs: Vec<f64>,
    /// LSTM cell states, `(T+1) x H`.
    cs: Vec<f64>,
    /// Post-activation gate values, `T x G*H`.
    acts: Vec<f64>,
    /// LSTM `act(c_t)`, `T x H`.
    tc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnNet {
    cell: CellKind,
    activation: Activation,
    inputs: usize,
    hidden: usize,
    layers: usize,
    params: Vec<f64>,
}

/// `out[j] += sum_k x[k] * w[k*stride + col0 + j]`.
#[inline]
fn gemv_acc(out: &mut [f64], x: &[f64], w: &[f64], stride: usize, col0: usize) {
    let n = out.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &w[k * stride + col0..k * stride + col0 + n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xk * wv;
        }
    }
}

/// `out[k] += sum_j w[k*stride + col0 + j] * d[j]`.
#[inline]
fn gemv_t_acc(out: &mut [f64], w: &[f64], d: &[f64], stride: usize, col0: usize) {
    let n = d.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * stride + col0..k * stride + col0 + n];
        *o += row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dw[k*stride + col0 + j] += x[k] * d[j]`.
#[inline]
fn outer_acc(dw: &mut [f64], x: &[f64], d: &[f64], stride: usize, col0: usize) {
    let n = d.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &mut dw[k * stride + col0..k * stride + col0 + n];
        for (r, &dv) in row.iter_mut().zip(d) {
            *r += xk * dv;
        }
    }
}

impl RnnNet {
    /// All-zero parameters.
    pub fn zeros(cell: CellKind, activation: Activation, inputs: usize, hidden: usize, layers: usize) -> Self {
        assert!(inputs >= 1 && hidden >= 1 && layers >= 1, "network dimensions must be positive");
        let mut net = Self { cell, activation, inputs, hidden, layers, params: Vec::new() };
        net.params = vec![0.0; net.n_params()];
        net
    }

    /// Glorot-uniform input kernels, uniform `+-1/sqrt(H)` recurrent kernels,
    /// Glorot-uniform dense weights, zero biases.
    pub fn init(cell: CellKind, activation: Activation, inputs: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        let mut net = Self::zeros(cell, activation, inputs, hidden, layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gh = cell.gates() * hidden;
        for l in 0..layers {
            let s = net.shape(l);
            let lim_x = (6.0 / (s.input + gh) as f64).sqrt();
            for w in &mut net.params[s.wx..s.wh] {
                *w = rng.gen_range(-lim_x..lim_x);
            }
            let lim_h = 1.0 / (hidden as f64).sqrt();
            for w in &mut net.params[s.wh..s.b] {
                *w = rng.gen_range(-lim_h..lim_h);
            }
        }
        let d = net.dense_offset();
        let lim = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut net.params[d..d + hidden] {
            *w = rng.gen_range(-lim..lim);
        }
        net
    }

    pub fn from_hyper(hyper: &RnnHyper, inputs: usize) -> Self {
        Self::init(hyper.cell, hyper.activation, inputs, hyper.neurons, hyper.layers, hyper.seed)
    }

    pub fn cell(&self) -> CellKind {
        self.cell
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn shape(&self, l: usize) -> LayerShape {
        let gh = self.cell.gates() * self.hidden;
        let mut start = 0;
        let mut input = self.inputs;
        for i in 0..=l {
            input = if i == 0 { self.inputs } else { self.hidden };
            if i < l {
                start += (input + self.hidden + 1) * gh;
            }
        }
        let wx = start;
        let wh = wx + input * gh;
        let b = wh + self.hidden * gh;
        LayerShape { input, wx, wh, b, end: b + gh }
    }

    /// Start of the dense output weights; everything before is recurrent.
    pub fn dense_offset(&self) -> usize {
        self.shape(self.layers - 1).end
    }

    pub fn n_params(&self) -> usize {
        self.dense_offset() + self.hidden + 1
    }

    fn check_input(&self, x: &[f64]) -> Result<usize, SeqError> {
        if x.is_empty() || x.len() % self.inputs != 0 {
            return Err(SeqError::ShapeMismatch(format!(
                "sequence of {} values is not a multiple of {} features",
                x.len(),
                self.inputs
            )));
        }
        Ok(x.len() / self.inputs)
    }

    fn layer_forward(&self, l: usize, input: &[f64], t: usize) -> LayerTrace {
        let s = self.shape(l);
        let (d, h) = (s.input, self.hidden);
        let gh = self.cell.gates() * h;
        let p = &self.params;
        let (wx, wh, b) = (&p[s.wx..s.wh], &p[s.wh..s.b], &p[s.b..s.end]);
        let act = self.activation;
        let lstm = self.cell == CellKind::Lstm;
        let mut hs = vec![0.0; (t + 1) * h];
        let mut cs = if lstm { vec![0.0; (t + 1) * h] } else { Vec::new() };
        let mut tc = if lstm { vec![0.0; t * h] } else { Vec::new() };
        let mut acts = vec![0.0; t * gh];
        let mut a = vec![0.0; gh];
        let mut rh = vec![0.0; h];
        for step in 0..t {
            let x = &input[step * d..(step + 1) * d];
            let (prev, next) = hs.split_at_mut((step + 1) * h);
            let hp = &prev[step * h..];
            let hn = &mut next[..h];
            let gates = &mut acts[step * gh..(step + 1) * gh];
            a.copy_from_slice(b);
            gemv_acc(&mut a, x, wx, gh, 0);
            match self.cell {
                CellKind::Simple => {
                    gemv_acc(&mut a, hp, wh, gh, 0);
                    for j in 0..h {
                        hn[j] = act.apply(a[j]);
                        gates[j] = hn[j];
                    }
                }
                CellKind::Lstm => {
                    gemv_acc(&mut a, hp, wh, gh, 0);
                    for j in 0..h {
                        let i = sigmoid(a[j]);
                        let f = sigmoid(a[h + j]);
                        let g = act.apply(a[2 * h + j]);
                        let o = sigmoid(a[3 * h + j]);
                        let c = f * cs[step * h + j] + i * g;
                        let tcj = act.apply(c);
                        cs[(step + 1) * h + j] = c;
                        tc[step * h + j] = tcj;
                        hn[j] = o * tcj;
                        gates[j] = i;
                        gates[h + j] = f;
                        gates[2 * h + j] = g;
                        gates[3 * h + j] = o;
                    }
                }
                CellKind::Gru => {
                    gemv_acc(&mut a[..2 * h], hp, wh, gh, 0);
                    for j in 0..h {
                        gates[j] = sigmoid(a[j]);
                        gates[h + j] = sigmoid(a[h + j]);
                        rh[j] = gates[h + j] * hp[j];
                    }
                    gemv_acc(&mut a[2 * h..], &rh, wh, gh, 2 * h);
                    for j in 0..h {
                        let cand = act.apply(a[2 * h + j]);
                        let z = gates[j];
                        gates[2 * h + j] = cand;
                        hn[j] = (1.0 - z) * hp[j] + z * cand;
                    }
                }
            }
        }
        LayerTrace { hs, cs, acts, tc }
    }

    /// Runs every layer; returns the traces and the output probability.
    fn forward_trace(&self, x: &[f64]) -> Result<(Vec<LayerTrace>, f64), SeqError> {
        let t = self.check_input(x)?;
        let h = self.hidden;
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers);
        for l in 0..self.layers {
            let tr = match traces.last() {
                None => self.layer_forward(l, x, t),
                Some(below) => self.layer_forward(l, &below.hs[h..], t),
            };
            if tr.hs.iter().any(|v| !v.is_finite()) {
                return Err(SeqError::NonFiniteActivation);
            }
            traces.push(tr);
        }
        let top = &traces[self.layers - 1].hs[t * h..];
        let d = self.dense_offset();
        let z = self.params[d + h] + top.iter().zip(&self.params[d..d + h]).map(|(a, b)| a * b).sum::<f64>();
        let p = sigmoid(z);
        if !p.is_finite() {
            return Err(SeqError::NonFiniteActivation);
        }
        Ok((traces, p))
    }

    /// Crash probability for one `T x F` sequence.
    pub fn forward(&self, x: &[f64]) -> Result<f64, SeqError> {
        self.forward_trace(x).map(|(_, p)| p)
    }

    fn layer_backward(
        &self,
        l: usize,
        input: &[f64],
        tr: &LayerTrace,
        dhs: &[f64],
        grad: &mut [f64],
        need_dx: bool,
    ) -> Vec<f64> {
        let s = self.shape(l);
        let (d, h) = (s.input, self.hidden);
        let gh = self.cell.gates() * h;
        let t = dhs.len() / h;
        let p = &self.params;
        let (wx, wh) = (&p[s.wx..s.wh], &p[s.wh..s.b]);
        let (gwx, rest) = grad[s.wx..s.end].split_at_mut(d * gh);
        let (gwh, gb) = rest.split_at_mut(h * gh);
        let act = self.activation;

        let mut dx = if need_dx { vec![0.0; t * d] } else { Vec::new() };
        let mut dh_carry = vec![0.0; h];
        let mut dc_carry = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut dhp = vec![0.0; h];
        let mut da = vec![0.0; gh];
        let mut rh = vec![0.0; h];
        let mut drh = vec![0.0; h];
        for step in (0..t).rev() {
            let x = &input[step * d..(step + 1) * d];
            let hp = &tr.hs[step * h..(step + 1) * h];
            let hn = &tr.hs[(step + 1) * h..(step + 2) * h];
            let gates = &tr.acts[step * gh..(step + 1) * gh];
            for j in 0..h {
                dh[j] = dhs[step * h + j] + dh_carry[j];
            }
            dhp.fill(0.0);
            match self.cell {
                CellKind::Simple => {
                    for j in 0..h {
                        da[j] = dh[j] * act.deriv_from_output(hn[j]);
                    }
                    gemv_t_acc(&mut dhp, wh, &da, gh, 0);
                    outer_acc(gwh, hp, &da, gh, 0);
                }
                CellKind::Lstm => {
                    let cp = &tr.cs[step * h..(step + 1) * h];
                    let tc = &tr.tc[step * h..(step + 1) * h];
                    for j in 0..h {
                        let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                        let dc = dc_carry[j] + dh[j] * o * act.deriv_from_output(tc[j]);
                        da[j] = dc * g * i * (1.0 - i);
                        da[h + j] = dc * cp[j] * f * (1.0 - f);
                        da[2 * h + j] = dc * i * act.deriv_from_output(g);
                        da[3 * h + j] = dh[j] * tc[j] * o * (1.0 - o);
                        dc_carry[j] = dc * f;
                    }
                    gemv_t_acc(&mut dhp, wh, &da, gh, 0);
                    outer_acc(gwh, hp, &da, gh, 0);
                }
                CellKind::Gru => {
                    for j in 0..h {
                        let (z, cand) = (gates[j], gates[2 * h + j]);
                        da[2 * h + j] = dh[j] * z * act.deriv_from_output(cand);
                        dhp[j] = dh[j] * (1.0 - z);
                        rh[j] = gates[h + j] * hp[j];
                    }
                    drh.fill(0.0);
                    gemv_t_acc(&mut drh, wh, &da[2 * h..], gh, 2 * h);
                    outer_acc(gwh, &rh, &da[2 * h..], gh, 2 * h);
                    for j in 0..h {
                        let (z, r, cand) = (gates[j], gates[h + j], gates[2 * h + j]);
                        da[j] = dh[j] * (cand - hp[j]) * z * (1.0 - z);
                        da[h + j] = drh[j] * hp[j] * r * (1.0 - r);
                        dhp[j] += drh[j] * r;
                    }
                    gemv_t_acc(&mut dhp, wh, &da[..2 * h], gh, 0);
                    outer_acc(gwh, hp, &da[..2 * h], gh, 0);
                }
            }
            for (g, v) in gb.iter_mut().zip(&da) {
                *g += v;
            }
            outer_acc(gwx, x, &da, gh, 0);
            if need_dx {
                gemv_t_acc(&mut dx[step * d..(step + 1) * d], wx, &da, gh, 0);
            }
            dh_carry.copy_from_slice(&dhp);
        }
        dx
    }

    /// Accumulates `dlogit * d(logit)/d(params)` for one sequence into `grad`.
    fn backward(&self, x: &[f64], traces: &[LayerTrace], dlogit: f64, grad: &mut [f64]) {
        let h = self.hidden;
        let t = x.len() / self.inputs;
        let d = self.dense_offset();
        let top = &traces[self.layers - 1].hs[t * h..];
        let mut dhs = vec![0.0; t * h];
        for j in 0..h {
            grad[d + j] += dlogit * top[j];
            dhs[(t - 1) * h + j] = dlogit * self.params[d + j];
        }
        grad[d + h] += dlogit;
        for l in (0..self.layers).rev() {
            let input = if l == 0 { x } else { &traces[l - 1].hs[h..] };
            dhs = self.layer_backward(l, input, &traces[l], &dhs, grad, l > 0);
        }
    }

    /// `l1 * sum|w| + l2 * sum w^2` over the recurrent layers' kernels,
    /// recurrent kernels and biases.
    pub fn penalty(&self, l1: f64, l2: f64) -> f64 {
        self.params[..self.dense_offset()].iter().map(|w| l1 * w.abs() + l2 * w * w).sum()
    }

    /// Mean clamped binary cross-entropy over `idx` plus the penalty.
    pub fn loss(&self, data: &Sequences, idx: &[usize], l1: f64, l2: f64) -> Result<f64, SeqError> {
        Ok(self.loss_and_grad_inner(data, idx, l1, l2, false)?.0)
    }

    /// Loss and its exact gradient over `idx`.
    pub fn loss_and_grad(&self, data: &Sequences, idx: &[usize], l1: f64, l2: f64) -> Result<(f64, Vec<f64>), SeqError> {
        self.loss_and_grad_inner(data, idx, l1, l2, true)
    }

    fn loss_and_grad_inner(
        &self,
        data: &Sequences,
        idx: &[usize],
        l1: f64,
        l2: f64,
        want_grad: bool,
    ) -> Result<(f64, Vec<f64>), SeqError> {
        if idx.is_empty() {
            return Err(SeqError::EmptySplit("batch"));
        }
        if data.features != self.inputs {
            return Err(SeqError::ShapeMismatch(format!("{} features, network expects {}", data.features, self.inputs)));
        }
        let np = if want_grad { self.n_params() } else { 0 };
        let parts = par::map_chunks(idx, GRAD_CHUNK, |chunk| -> Result<(f64, Vec<f64>), SeqError> {
            let mut grad = vec![0.0; np];
            let mut loss = 0.0;
            for &i in chunk {
                let x = data.sample(i);
                let (traces, p) = self.forward_trace(x)?;
                let y = f64::from(data.labels[i]);
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
                if want_grad && pc == p {
                    self.backward(x, &traces, p - y, &mut grad);
                }
            }
            Ok((loss, grad))
        });
        let n = idx.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; np];
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        for g in &mut grad {
            *g /= n;
        }
        if want_grad {
            for (g, w) in grad[..self.dense_offset()].iter_mut().zip(&self.params) {
                let sign = if *w > 0.0 {
                    1.0
                } else if *w < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *g += l1 * sign + 2.0 * l2 * w;
            }
        }
        Ok((loss / n + self.penalty(l1, l2), grad))
    }

    /// Probabilities for every sequence, in order.
    pub fn predict_proba(&self, data: &Sequences) -> Result<Vec<f64>, SeqError> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        if data.features != self.inputs {
            return Err(SeqError::ShapeMismatch(format!("{} features, network expects {}", data.features, self.inputs)));
        }
        par::map_range(data.len(), |i| self.forward(data.sample(i))).into_iter().collect()
    }

    pub fn save<W: Write>(&self, meta: &CheckpointMeta, mut out: W) -> Result<(), SeqError> {
        let header = CheckpointHeader {
            format: "crashwatch-rnn".into(),
            version: CHECKPOINT_VERSION,
            cell: self.cell,
            activation: self.activation,
            inputs: self.inputs,
            hidden: self.hidden,
            layers: self.layers,
            n_params: self.params.len(),
            meta: meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| SeqError::Checkpoint(e.to_string()))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        write_f64s(&mut out, &self.params)?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<(Self, CheckpointMeta), SeqError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SeqError::Checkpoint("bad magic".into()));
        }
        let header: CheckpointHeader = read_json_header(&mut input)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(SeqError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        if header.inputs == 0 || header.hidden == 0 || header.layers == 0 {
            return Err(SeqError::Checkpoint("zero dimension".into()));
        }
        let mut net = Self::zeros(header.cell, header.activation, header.inputs, header.hidden, header.layers);
        if header.n_params != net.params.len() {
            return Err(SeqError::Checkpoint("parameter count does not match architecture".into()));
        }
        net.params = read_f64s(&mut input, header.n_params)?;
        Ok((net, header.meta))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hyper: RnnHyper,
    pub epoch: usize,
    pub init: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    cell: CellKind,
    activation: Activation,
    inputs: usize,
    hidden: usize,
    layers: usize,
    n_params: usize,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Patience-based stopping on a higher-is-better score.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::NEG_INFINITY, best_epoch: 0, wait: 0 }
    }

    /// Records the score for a 1-based epoch. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        if score > self.best + self.min_delta || (self.best == f64::NEG_INFINITY && score.is_finite()) {
            self.best = score;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValAucPrc,
    /// Validation set had no positives; negative validation loss is used.
    ValLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_score: Vec<f64>,
    pub monitor: Monitor,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub init: String,
}

pub const INIT_DESCRIPTION: &str = "glorot_uniform kernels, uniform(+-1/sqrt(H)) recurrent, zero bias";

fn val_score(net: &RnnNet, val: &Sequences, monitor: Monitor) -> Result<f64, SeqError> {
    match monitor {
        Monitor::ValAucPrc => {
            let p = net.predict_proba(val)?;
            Ok(evaluation::auc_prc(val.labels(), &p).unwrap_or(0.0))
        }
        Monitor::ValLoss => {
            let idx: Vec<usize> = (0..val.len()).collect();
            Ok(-net.loss(val, &idx, 0.0, 0.0)?)
        }
    }
}

/// Mini-batch Adam with early stopping; returns the best-epoch weights.
pub fn train(
    mut net: RnnNet,
    train: &Sequences,
    val: &Sequences,
    hyper: &RnnHyper,
) -> Result<(RnnNet, TrainHistory), SeqError> {
    if train.is_empty() {
        return Err(SeqError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(SeqError::EmptySplit("validation"));
    }
    let monitor = if val.positives() > 0 {
        Monitor::ValAucPrc
    } else {
        log::info!("validation split has no positives; early stopping monitors validation loss");
        Monitor::ValLoss
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(net.n_params());
    let mut stopper = EarlyStopping::new(hyper.patience.max(1), hyper.min_delta);
    let mut best = net.params.clone();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_score: Vec::new(),
        monitor,
        stopped_epoch: 0,
        best_epoch: 0,
        init: INIT_DESCRIPTION.into(),
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = hyper.batch_size.max(1);
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for b in order.chunks(batch) {
            let (loss, grad) = net.loss_and_grad(train, b, hyper.l1, hyper.l2)?;
            total += loss * b.len() as f64;
            adam.step(&mut net.params, &grad, hyper.learning_rate);
        }
        if net.params.iter().any(|w| !w.is_finite()) {
            return Err(SeqError::NonFiniteActivation);
        }
        history.train_loss.push(total / train.len() as f64);
        let score = val_score(&net, val, monitor)?;
        history.val_score.push(score);
        history.stopped_epoch = epoch;
        let (improved, stop) = stopper.update(epoch, score);
        if improved {
            best.copy_from_slice(&net.params);
        }
        if stop {
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    if history.best_epoch > 0 {
        net.params = best;
    }
    Ok((net, history))
}
