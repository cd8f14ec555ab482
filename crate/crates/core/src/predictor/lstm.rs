//! Single-cell LSTM with a linear readout, trained by minibatch SGD with
//! backpropagation through time.
//!
//! Per step, with `z = [x_t; h_{t-1}]`:
//!
//! ```text
//! i = sigmoid(W_i z + b_i)    f = sigmoid(W_f z + b_f)
//! o = sigmoid(W_o z + b_o)    g = tanh(W_g z + b_g)
//! c_t = f * c_{t-1} + i * g   h_t = o * tanh(c_t)
//! ```
//!
//! The prediction is `y = W_y h_L + b_y` after the last history step, and
//! the loss is the mean squared error over all predicted components.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Normalizer, SequencePredictor};
use crate::error::{Error, Result};
use crate::trace::{Trace, NUM_EVENTS};

const GATES: usize = 4;
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_OUTPUT: usize = 2;
const GATE_CANDIDATE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub history_len: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub forget_bias: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            lr_decay: 0.5,
            lr_decay_every: 10,
            epochs: 30,
            batch_size: 32,
            history_len: 16,
            hidden_dim: 32,
            seed: 0,
            clip_norm: 5.0,
            forget_bias: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.lr_decay, self.clip_norm];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.epochs == 0
            || self.batch_size == 0
            || self.history_len == 0
            || self.hidden_dim == 0
            || self.lr_decay_every == 0
        {
            return Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// The behavior predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    input_dim: usize,
    hidden_dim: usize,
    history_len: usize,
    params: Vec<f64>,
    normalizer: Normalizer,
    /// Configuration the model was trained with, if any.
    pub config: Option<TrainConfig>,
}

/// One training example: `history_len` normalized inputs and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub inputs: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss over each epoch, accumulated while training.
    pub epoch_loss: Vec<f64>,
    /// Loss of the final model over every training window.
    pub final_mse: f64,
    pub windows: usize,
    pub skipped_traces: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward activations kept for backpropagation.
struct Tape {
    z: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h_last: Vec<f64>,
}

impl LstmModel {
    /// A model with every parameter zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize, history_len: usize, normalizer: Normalizer) -> Self {
        let n = Self::param_count_for(input_dim, hidden_dim);
        Self { input_dim, hidden_dim, history_len, params: vec![0.0; n], normalizer, config: None }
    }

    /// Uniform(+-1/sqrt(h)) weights, zero biases except the forget gate.
    pub fn initialize(input_dim: usize, normalizer: Normalizer, cfg: &TrainConfig) -> Self {
        let mut model = Self::zeros(input_dim, cfg.hidden_dim, cfg.history_len, normalizer);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
        let (h, d) = (model.hidden_dim, model.input_dim);
        let w_len = GATES * h * (d + h);
        for p in &mut model.params[..w_len] {
            *p = rng.random_range(-bound..bound);
        }
        let ry = model.readout_offset();
        for p in &mut model.params[ry..ry + d * h] {
            *p = rng.random_range(-bound..bound);
        }
        let b = model.bias_offset();
        for p in &mut model.params[b + GATE_FORGET * h..b + (GATE_FORGET + 1) * h] {
            *p = cfg.forget_bias;
        }
        model.config = Some(cfg.clone());
        model
    }

    pub fn from_parts(
        input_dim: usize,
        hidden_dim: usize,
        history_len: usize,
        params: Vec<f64>,
        normalizer: Normalizer,
        config: Option<TrainConfig>,
    ) -> Result<Self> {
        if params.len() != Self::param_count_for(input_dim, hidden_dim) {
            return Err(Error::SchemaMismatch(format!(
                "{} parameters for input {input_dim} / hidden {hidden_dim}",
                params.len()
            )));
        }
        if normalizer.dim() != input_dim || normalizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::SchemaMismatch("normalization statistics do not match the model".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(Self { input_dim, hidden_dim, history_len, params, normalizer, config })
    }

    fn param_count_for(d: usize, h: usize) -> usize {
        GATES * h * (d + h) + GATES * h + d * h + d
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn bias_offset(&self) -> usize {
        GATES * self.hidden_dim * (self.input_dim + self.hidden_dim)
    }

    fn readout_offset(&self) -> usize {
        self.bias_offset() + GATES * self.hidden_dim
    }

    fn readout_bias_offset(&self) -> usize {
        self.readout_offset() + self.input_dim * self.hidden_dim
    }

    /// Gate weights, `4h x (d+h)` row-major, gates stacked as input,
    /// forget, output, candidate.
    pub fn gate_weights(&self) -> &[f64] {
        &self.params[..self.bias_offset()]
    }

    pub fn gate_bias(&self) -> &[f64] {
        &self.params[self.bias_offset()..self.readout_offset()]
    }

    /// Readout weights, `d x h` row-major.
    pub fn readout_weights(&self) -> &[f64] {
        &self.params[self.readout_offset()..self.readout_bias_offset()]
    }

    pub fn readout_bias(&self) -> &[f64] {
        &self.params[self.readout_bias_offset()..]
    }

    pub fn readout_bias_mut(&mut self) -> &mut [f64] {
        let start = self.readout_bias_offset();
        &mut self.params[start..]
    }

    /// Runs the recurrence over `inputs` (`L x d` flattened). With `record`
    /// the activations are kept for backpropagation.
    fn forward(&self, params: &[f64], inputs: &[f64], record: bool) -> (Vec<f64>, Option<Tape>) {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let steps = inputs.len() / d;
        let zw = d + h;
        let (w, rest) = params.split_at(GATES * h * zw);
        let (b, rest) = rest.split_at(GATES * h);
        let (wy, by) = rest.split_at(d * h);

        let mut tape = record.then(|| Tape {
            z: Vec::with_capacity(steps * zw),
            gates: Vec::with_capacity(steps * GATES * h),
            c: Vec::with_capacity((steps + 1) * h),
            tanh_c: Vec::with_capacity(steps * h),
            h_last: Vec::new(),
        });
        let mut z = vec![0.0; zw];
        let mut c = vec![0.0; h];
        let mut a = vec![0.0; GATES * h];
        if let Some(t) = tape.as_mut() {
            t.c.extend_from_slice(&c);
        }
        for step in 0..steps {
            z[..d].copy_from_slice(&inputs[step * d..(step + 1) * d]);
            for (r, out) in a.iter_mut().enumerate() {
                let row = &w[r * zw..(r + 1) * zw];
                *out = b[r] + row.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>();
            }
            for j in 0..h {
                let i = sigmoid(a[GATE_INPUT * h + j]);
                let f = sigmoid(a[GATE_FORGET * h + j]);
                let o = sigmoid(a[GATE_OUTPUT * h + j]);
                let g = a[GATE_CANDIDATE * h + j].tanh();
                a[GATE_INPUT * h + j] = i;
                a[GATE_FORGET * h + j] = f;
                a[GATE_OUTPUT * h + j] = o;
                a[GATE_CANDIDATE * h + j] = g;
                c[j] = f * c[j] + i * g;
            }
            if let Some(t) = tape.as_mut() {
                t.z.extend_from_slice(&z);
                t.gates.extend_from_slice(&a);
                t.c.extend_from_slice(&c);
            }
            for j in 0..h {
                let tc = c[j].tanh();
                z[d + j] = a[GATE_OUTPUT * h + j] * tc;
                if let Some(t) = tape.as_mut() {
                    t.tanh_c.push(tc);
                }
            }
        }
        let hidden = &z[d..];
        let y: Vec<f64> = (0..d)
            .map(|k| by[k] + wy[k * h..(k + 1) * h].iter().zip(hidden).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        if let Some(t) = tape.as_mut() {
            t.h_last = hidden.to_vec();
        }
        (y, tape)
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d y`.
    fn backward(&self, params: &[f64], tape: &Tape, dy: &[f64], grad: &mut [f64]) {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let zw = d + h;
        let steps = tape.z.len() / zw;
        let w_len = GATES * h * zw;
        let (b_off, y_off) = (w_len, w_len + GATES * h);
        let by_off = y_off + d * h;
        let w = &params[..w_len];
        let wy = &params[y_off..by_off];

        let mut dh = vec![0.0; h];
        for k in 0..d {
            grad[by_off + k] += dy[k];
            for j in 0..h {
                grad[y_off + k * h + j] += dy[k] * tape.h_last[j];
                dh[j] += wy[k * h + j] * dy[k];
            }
        }
        let mut dc = vec![0.0; h];
        let mut da = vec![0.0; GATES * h];
        for step in (0..steps).rev() {
            let gates = &tape.gates[step * GATES * h..(step + 1) * GATES * h];
            let c_prev = &tape.c[step * h..(step + 1) * h];
            let tanh_c = &tape.tanh_c[step * h..(step + 1) * h];
            for j in 0..h {
                let i = gates[GATE_INPUT * h + j];
                let f = gates[GATE_FORGET * h + j];
                let o = gates[GATE_OUTPUT * h + j];
                let g = gates[GATE_CANDIDATE * h + j];
                let tc = tanh_c[j];
                let d_o = dh[j] * tc;
                dc[j] += dh[j] * o * (1.0 - tc * tc);
                da[GATE_INPUT * h + j] = dc[j] * g * i * (1.0 - i);
                da[GATE_FORGET * h + j] = dc[j] * c_prev[j] * f * (1.0 - f);
                da[GATE_OUTPUT * h + j] = d_o * o * (1.0 - o);
                da[GATE_CANDIDATE * h + j] = dc[j] * i * (1.0 - g * g);
                dc[j] *= f;
            }
            let z = &tape.z[step * zw..(step + 1) * zw];
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dar) in da.iter().enumerate() {
                if dar == 0.0 {
                    continue;
                }
                grad[b_off + r] += dar;
                let row = r * zw;
                let grow = &mut grad[row..row + zw];
                for (gv, zv) in grow.iter_mut().zip(z) {
                    *gv += dar * zv;
                }
                let wrow = &w[row + d..row + zw];
                for (dhj, wv) in dh.iter_mut().zip(wrow) {
                    *dhj += dar * wv;
                }
            }
        }
    }

    fn predict_with(&self, params: &[f64], inputs: &[f64]) -> Vec<f64> {
        self.forward(params, inputs, false).0
    }

    /// Mean squared error over a batch, using `params` in place of the
    /// model's own.
    fn batch_loss_with(&self, params: &[f64], batch: &[&Window]) -> f64 {
        let mut sum = 0.0;
        for win in batch {
            let y = self.predict_with(params, &win.inputs);
            sum += y.iter().zip(&win.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        sum / (batch.len() * self.input_dim) as f64
    }

    /// Loss and its gradient over a batch.
    fn batch_gradient(&self, batch: &[&Window], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 2.0 / (batch.len() * self.input_dim) as f64;
        let mut sum = 0.0;
        for win in batch {
            let (y, tape) = self.forward(&self.params, &win.inputs, true);
            let dy: Vec<f64> = y.iter().zip(&win.target).map(|(a, b)| scale * (a - b)).collect();
            sum += y.iter().zip(&win.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            self.backward(&self.params, tape.as_ref().expect("recorded"), &dy, grad);
        }
        sum / (batch.len() * self.input_dim) as f64
    }

    pub fn mse(&self, windows: &[Window]) -> f64 {
        let refs: Vec<&Window> = windows.iter().collect();
        self.batch_loss_with(&self.params, &refs)
    }

    /// `mse(batch)` and its gradient with respect to `params()`.
    pub fn loss_and_gradient(&self, batch: &[Window]) -> (f64, Vec<f64>) {
        let refs: Vec<&Window> = batch.iter().collect();
        let mut grad = vec![0.0; self.param_count()];
        let loss = self.batch_gradient(&refs, &mut grad);
        (loss, grad)
    }

    /// Gate activations `(i, f, o, g)` at every step for `inputs`; exposed
    /// for checking activation ranges.
    pub fn gate_trace(&self, inputs: &[f64]) -> Vec<[Vec<f64>; 4]> {
        let (_, tape) = self.forward(&self.params, inputs, true);
        let tape = tape.expect("recorded");
        let h = self.hidden_dim;
        tape.gates.chunks(GATES * h).map(|g| std::array::from_fn(|k| g[k * h..(k + 1) * h].to_vec())).collect()
    }
}

impl SequencePredictor for LstmModel {
    fn name(&self) -> &str {
        "lstm"
    }

    fn history_len(&self) -> usize {
        self.history_len
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    fn predict_normalized(&self, history: &[f64]) -> Vec<f64> {
        self.predict_with(&self.params, history)
    }
}

/// Sliding windows (history `history_len`, one-step target) over a trace,
/// normalized.
pub fn windows_from_trace(trace: &Trace, normalizer: &Normalizer, history_len: usize) -> Vec<Window> {
    let normalized: Vec<Vec<f64>> = trace.samples().iter().map(|s| normalizer.normalize(&s.counts)).collect();
    if normalized.len() <= history_len {
        return Vec::new();
    }
    (0..normalized.len() - history_len)
        .map(|start| Window {
            inputs: normalized[start..start + history_len].concat(),
            target: normalized[start + history_len].clone(),
        })
        .collect()
}

/// Trains one shared predictor on normal-workload traces.
pub fn train(traces: &[&Trace], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::Empty("no training traces".into()));
    }
    let normalizer = Normalizer::fit(traces)?;
    let mut windows = Vec::new();
    let mut skipped = 0;
    for t in traces {
        if t.len() <= cfg.history_len {
            log::warn!("skipping trace {} with {} samples (history length {})", t.label, t.len(), cfg.history_len);
            skipped += 1;
            continue;
        }
        windows.extend(windows_from_trace(t, &normalizer, cfg.history_len));
    }
    if windows.is_empty() {
        return Err(Error::TooShort(format!(
            "every trace is shorter than history length + 1 = {}",
            cfg.history_len + 1
        )));
    }

    let mut model = LstmModel::initialize(NUM_EVENTS, normalizer, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut grad = vec![0.0; model.param_count()];
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &windows[i]).collect();
            let loss = model.batch_gradient(&batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, loss });
            }
            total += loss * batch.len() as f64;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let step = if norm > cfg.clip_norm { lr * cfg.clip_norm / norm } else { lr };
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= step * g;
            }
        }
        let mean = total / windows.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1, loss: mean });
        }
        log::debug!("epoch {}: loss {mean:.6} (lr {lr})", epoch + 1);
        epoch_loss.push(mean);
    }
    let final_mse = model.mse(&windows);
    let report = TrainReport { epoch_loss, final_mse, windows: windows.len(), skipped_traces: skipped };
    Ok((model, report))
}

/// Largest relative disagreement between the analytic gradient and a
/// central finite difference (step `1e-5`) over `n_params` randomly chosen
/// parameters. Relative error is `|a - n| / max(|a|, |n|, 1e-7)`; the floor
/// keeps parameters with vanishing gradients from dominating.
pub fn grad_check(model: &LstmModel, batch: &[Window], n_params: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-7;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("gradient check needs a non-empty batch".into()));
    }
    if n_params == 0 {
        return Err(Error::InvalidArgument("gradient check needs at least one parameter".into()));
    }
    let refs: Vec<&Window> = batch.iter().collect();
    let mut grad = vec![0.0; model.param_count()];
    model.batch_gradient(&refs, &mut grad);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_params.min(model.param_count());
    let picks = rand::seq::index::sample(&mut rng, model.param_count(), n);
    let mut params = model.params.clone();
    let mut worst: f64 = 0.0;
    for idx in picks.iter() {
        let orig = params[idx];
        params[idx] = orig + STEP;
        let up = model.batch_loss_with(&params, &refs);
        params[idx] = orig - STEP;
        let down = model.batch_loss_with(&params, &refs);
        params[idx] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grad[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
