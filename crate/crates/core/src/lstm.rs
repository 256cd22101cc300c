//! Forward (unidirectional) LSTM labeler with forget gates and peephole
//! connections on all three gates.
//!
//! ```text
//! i_t = σ(W_i x_t + U_i h_{t-1} + p_i ⊙ c_{t-1} + b_i)
//! f_t = σ(W_f x_t + U_f h_{t-1} + p_f ⊙ c_{t-1} + b_f)
//! g_t = tanh(W_g x_t + U_g h_{t-1} + b_g)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ g_t
//! o_t = σ(W_o x_t + U_o h_{t-1} + p_o ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! Training is truncated BPTT with plain SGD, global-norm clipping and an
//! exponential learning-rate decay after a warm period.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSequence, ProbSeries, StateSequence};
use crate::error::{Error, Result};
use crate::matrix::{argmax, axpy, dot, Matrix};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ops;
use crate::nn::optim::sgd_step;
use crate::nn::ParamSet;
use crate::seed;

pub const CHECKPOINT_KIND: &str = "lstm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub n_hidden_layers: usize,
    pub hidden_units: usize,
    pub dropout_prob: f64,
    pub initial_lr: f64,
    pub n_features: usize,
    pub n_states: usize,
    #[serde(default = "default_window")]
    pub tbptt_window: usize,
}

fn default_window() -> usize {
    64
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_hidden_layers) {
            return Err(Error::config(format!(
                "LSTM supports 1 or 2 hidden layers, got {}",
                self.n_hidden_layers
            )));
        }
        if self.hidden_units == 0 || self.n_features == 0 {
            return Err(Error::config("hidden_units and n_features must be positive"));
        }
        if self.n_states < 2 {
            return Err(Error::config("n_states must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout_prob must lie in [0, 1)"));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::config("initial_lr must be >= 0"));
        }
        if self.tbptt_window == 0 {
            return Err(Error::config("tbptt_window must be at least 1"));
        }
        Ok(())
    }

    /// Trainable scalar count.
    pub fn n_parameters(&self) -> usize {
        let h = self.hidden_units;
        let mut n = 0;
        let mut input = self.n_features;
        for _ in 0..self.n_hidden_layers {
            n += 4 * h * (input + h + 1) + 3 * h;
            input = h;
        }
        n + self.n_states * (h + 1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmTrainOptions {
    pub epochs: usize,
    pub clip_norm: f64,
    /// Multiplicative per-epoch decay applied once `epoch >= decay_after`.
    pub lr_decay: f64,
    pub decay_after: usize,
    pub seed: u64,
}

impl Default for LstmTrainOptions {
    fn default() -> Self {
        LstmTrainOptions {
            epochs: 50,
            clip_norm: 5.0,
            lr_decay: 0.9,
            decay_after: 10,
            seed: 0,
        }
    }
}

impl LstmTrainOptions {
    pub fn learning_rate(&self, initial: f64, epoch: usize) -> f64 {
        let n = epoch.saturating_sub(self.decay_after) as i32;
        initial * self.lr_decay.powi(n)
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSlots {
    wx: usize,
    wh: usize,
    b: usize,
    peep: usize,
}

#[derive(Clone, Debug)]
pub struct Lstm {
    config: LstmConfig,
    params: ParamSet,
    layers: Vec<LayerSlots>,
    head: (usize, usize),
}

/// Activations of one cell step, kept for BPTT.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
}

/// Recurrent state of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw cell weights for one layer, `[4H][in]`, `[4H][H]`, `[4H]`, `[3][H]`
/// with gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct CellParams<'a> {
    pub wx: &'a [f64],
    pub wh: &'a [f64],
    pub b: &'a [f64],
    pub peep: &'a [f64],
}

/// One peephole LSTM step. Returns `(h_t, c_t)` and the cache for BPTT.
pub fn cell_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: CellParams<'_>) -> (Vec<f64>, Vec<f64>, StepCache) {
    let hn = h_prev.len();
    let n_in = x.len();
    let pre = |row: usize| -> f64 {
        dot(&p.wx[row * n_in..(row + 1) * n_in], x) + dot(&p.wh[row * hn..(row + 1) * hn], h_prev) + p.b[row]
    };
    let (pi, pf, po) = (&p.peep[..hn], &p.peep[hn..2 * hn], &p.peep[2 * hn..3 * hn]);
    let mut i = vec![0.0; hn];
    let mut f = vec![0.0; hn];
    let mut g = vec![0.0; hn];
    let mut o = vec![0.0; hn];
    let mut c = vec![0.0; hn];
    let mut tc = vec![0.0; hn];
    let mut h = vec![0.0; hn];
    for j in 0..hn {
        i[j] = sigmoid(pre(j) + pi[j] * c_prev[j]);
        f[j] = sigmoid(pre(hn + j) + pf[j] * c_prev[j]);
        g[j] = pre(2 * hn + j).tanh();
        c[j] = f[j] * c_prev[j] + i[j] * g[j];
        o[j] = sigmoid(pre(3 * hn + j) + po[j] * c[j]);
        tc[j] = c[j].tanh();
        h[j] = o[j] * tc[j];
    }
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c: c.clone(),
        tc,
    };
    (h, c, cache)
}

/// Backward through one step. Accumulates parameter gradients and returns
/// `(dx, dh_prev, dc_prev)`.
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    cache: &StepCache,
    dh: &[f64],
    dc_next: &[f64],
    p: CellParams<'_>,
    dwx: &mut [f64],
    dwh: &mut [f64],
    db: &mut [f64],
    dpeep: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hn = dh.len();
    let n_in = cache.x.len();
    let (pi, pf, po) = (&p.peep[..hn], &p.peep[hn..2 * hn], &p.peep[2 * hn..3 * hn]);
    let mut da = vec![0.0; 4 * hn];
    let mut dc_prev = vec![0.0; hn];
    for j in 0..hn {
        let (i, f, g, o, tc) = (cache.i[j], cache.f[j], cache.g[j], cache.o[j], cache.tc[j]);
        let da_o = dh[j] * tc * o * (1.0 - o);
        let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc) + da_o * po[j];
        let da_i = dc * g * i * (1.0 - i);
        let da_g = dc * i * (1.0 - g * g);
        let da_f = dc * cache.c_prev[j] * f * (1.0 - f);
        dc_prev[j] = dc * f + da_i * pi[j] + da_f * pf[j];
        dpeep[j] += da_i * cache.c_prev[j];
        dpeep[hn + j] += da_f * cache.c_prev[j];
        dpeep[2 * hn + j] += da_o * cache.c[j];
        da[j] = da_i;
        da[hn + j] = da_f;
        da[2 * hn + j] = da_g;
        da[3 * hn + j] = da_o;
    }
    let mut dx = vec![0.0; n_in];
    let mut dh_prev = vec![0.0; hn];
    for (row, &d) in da.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        db[row] += d;
        axpy(d, &cache.x, &mut dwx[row * n_in..(row + 1) * n_in]);
        axpy(d, &cache.h_prev, &mut dwh[row * hn..(row + 1) * hn]);
        axpy(d, &p.wx[row * n_in..(row + 1) * n_in], &mut dx);
        axpy(d, &p.wh[row * hn..(row + 1) * hn], &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

struct ChunkTape {
    steps: Vec<Vec<StepCache>>, // [t][layer]
    masks: Vec<Vec<Vec<f64>>>,  // [t][layer] dropout scale per unit (empty = none)
    top: Matrix,                // head input, post-dropout
    probs: Matrix,
}

impl Lstm {
    pub fn build(config: LstmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(seed, "lstm/init");
        let h = config.hidden_units;
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let mut n_in = config.n_features;
        let bound = 1.0 / (h as f64).sqrt();
        for l in 0..config.n_hidden_layers {
            let wx = params.add(format!("l{l}.wx"), &[4 * h, n_in]);
            let wh = params.add(format!("l{l}.wh"), &[4 * h, h]);
            let b = params.add(format!("l{l}.b"), &[4 * h]);
            let peep = params.add(format!("l{l}.peep"), &[3, h]);
            params.init_uniform(wx, bound, &mut rng);
            params.init_uniform(wh, bound, &mut rng);
            params.init_uniform(peep, bound, &mut rng);
            // forget-gate bias starts open
            params.get_mut(b)[h..2 * h].fill(1.0);
            layers.push(LayerSlots { wx, wh, b, peep });
            n_in = h;
        }
        let hw = params.add("head.w", &[config.n_states, h]);
        let hb = params.add("head.b", &[config.n_states]);
        params.init_uniform(hw, bound, &mut rng);
        Ok(Lstm {
            config,
            params,
            layers,
            head: (hw, hb),
        })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn cell(&self, l: usize) -> CellParams<'_> {
        let s = self.layers[l];
        CellParams {
            wx: self.params.get(s.wx),
            wh: self.params.get(s.wh),
            b: self.params.get(s.b),
            peep: self.params.get(s.peep),
        }
    }

    pub fn initial_state(&self) -> LstmState {
        let h = self.config.hidden_units;
        LstmState {
            h: vec![vec![0.0; h]; self.config.n_hidden_layers],
            c: vec![vec![0.0; h]; self.config.n_hidden_layers],
        }
    }

    /// Advances the recurrent state by one frame and returns the state
    /// distribution for that frame. Inference only (no dropout).
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.n_features {
            return Err(Error::shape(format!(
                "frame has {} features, model expects {}",
                x.len(),
                self.config.n_features
            )));
        }
        let mut input = x.to_vec();
        for l in 0..self.layers.len() {
            let (h, c, _) = cell_step(&input, &state.h[l], &state.c[l], self.cell(l));
            state.h[l] = h.clone();
            state.c[l] = c;
            input = h;
        }
        Ok(self.head_probs(&input))
    }

    fn head_probs(&self, top: &[f64]) -> Vec<f64> {
        let (hw, hb) = self.head;
        let w = self.params.get(hw);
        let b = self.params.get(hb);
        let hn = top.len();
        let mut logits: Vec<f64> = (0..self.config.n_states)
            .map(|j| dot(top, &w[j * hn..(j + 1) * hn]) + b[j])
            .collect();
        ops::softmax_in_place(&mut logits);
        logits
    }

    pub fn forward(&self, x: &FeatureSequence) -> Result<ProbSeries> {
        if x.n_features() != self.config.n_features {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.n_features(),
                self.config.n_features
            )));
        }
        let mut state = self.initial_state();
        let mut out = Matrix::zeros(x.len(), self.config.n_states);
        for t in 0..x.len() {
            let p = self.step(&mut state, x.frame(t))?;
            out.row_mut(t).copy_from_slice(&p);
        }
        ProbSeries::new(out)
    }

    fn run_chunk(
        &self,
        x: &Matrix,
        start: usize,
        end: usize,
        state: &LstmState,
        masks: Option<&[Vec<Vec<f64>>]>,
    ) -> (ChunkTape, LstmState) {
        let n_layers = self.layers.len();
        let hn = self.config.hidden_units;
        let mut st = state.clone();
        let mut steps = Vec::with_capacity(end - start);
        let mut top = Matrix::zeros(end - start, hn);
        for t in start..end {
            let mut input = x.row(t).to_vec();
            let mut caches = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let (h, c, cache) = cell_step(&input, &st.h[l], &st.c[l], self.cell(l));
                st.h[l] = h.clone();
                st.c[l] = c;
                caches.push(cache);
                input = h;
                if let Some(m) = masks {
                    let mk = &m[t - start][l];
                    if !mk.is_empty() {
                        for (v, s) in input.iter_mut().zip(mk) {
                            *v *= s;
                        }
                    }
                }
            }
            top.row_mut(t - start).copy_from_slice(&input);
            steps.push(caches);
        }
        let (hw, hb) = self.head;
        let logits = ops::dense_logits(&top, self.params.get(hw), self.params.get(hb))
            .expect("head shape fixed at build");
        let probs = ops::softmax_rows(&logits);
        (
            ChunkTape {
                steps,
                masks: masks.map(|m| m.to_vec()).unwrap_or_default(),
                top,
                probs,
            },
            st,
        )
    }

    fn backward_chunk(&self, tape: &ChunkTape, labels: &[usize], grads: &mut ParamSet) {
        let n_layers = self.layers.len();
        let hn = self.config.hidden_units;
        let g_logits = ops::softmax_ce_grad(&tape.probs, labels);
        let (hw, hb) = self.head;
        let (dhw, dhb) = two_mut(grads, hw, hb);
        let g_top = ops::dense_backward(&tape.top, &g_logits, self.params.get(hw), dhw, dhb);

        let mut dh_next = vec![vec![0.0; hn]; n_layers];
        let mut dc_next = vec![vec![0.0; hn]; n_layers];
        for t in (0..tape.steps.len()).rev() {
            // gradient arriving at the output of the top layer
            let mut d_out = g_top.row(t).to_vec();
            for l in (0..n_layers).rev() {
                if let Some(mk) = tape.masks.get(t).map(|m| &m[l]) {
                    if !mk.is_empty() {
                        for (v, s) in d_out.iter_mut().zip(mk) {
                            *v *= s;
                        }
                    }
                }
                let dh: Vec<f64> = d_out.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                let s = self.layers[l];
                let p = self.cell(l);
                let (dwx, dwh, db, dpeep) = four_mut(grads, s.wx, s.wh, s.b, s.peep);
                let (dx, dh_prev, dc_prev) =
                    cell_backward(&tape.steps[t][l], &dh, &dc_next[l], p, dwx, dwh, db, dpeep);
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                d_out = dx;
            }
        }
    }

    /// Full-sequence BPTT loss and gradient with dropout disabled.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, ParamSet)> {
        if x.rows() != labels.len() || x.rows() == 0 {
            return Err(Error::shape("frame/label count mismatch or empty sequence"));
        }
        let (tape, _) = self.run_chunk(x, 0, x.rows(), &self.initial_state(), None);
        let loss = ops::cross_entropy(&tape.probs, labels)?;
        let mut grads = self.params.zeros_like();
        self.backward_chunk(&tape, labels, &mut grads);
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let (tape, _) = self.run_chunk(x, 0, x.rows(), &self.initial_state(), None);
        ops::cross_entropy(&tape.probs, labels)
    }

    fn dropout_masks(&self, rng: &mut seed::Rng, len: usize) -> Vec<Vec<Vec<f64>>> {
        let p = self.config.dropout_prob;
        let hn = self.config.hidden_units;
        (0..len)
            .map(|_| {
                (0..self.layers.len())
                    .map(|_| {
                        if p == 0.0 {
                            Vec::new()
                        } else {
                            (0..hn)
                                .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
                                .collect()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Truncated-BPTT SGD training. Returns the mean loss per epoch.
    pub fn train(
        &mut self,
        data: &[(&FeatureSequence, &StateSequence)],
        opts: &LstmTrainOptions,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        for (x, y) in data {
            if x.n_features() != self.config.n_features || x.len() != y.len() {
                return Err(Error::shape("training pair does not match model dimensions"));
            }
            if y.labels().iter().any(|&l| l >= self.config.n_states) {
                return Err(Error::invalid("label outside the model's state count"));
            }
        }
        let mut order_rng = seed::stream(opts.seed, "lstm/shuffle");
        let mut drop_rng = seed::stream(opts.seed, "lstm/dropout");
        let mut order: Vec<usize> = (0..data.len()).collect();
        let window = self.config.tbptt_window;
        let mut curve = Vec::with_capacity(opts.epochs);
        for epoch in 0..opts.epochs {
            let lr = opts.learning_rate(self.config.initial_lr, epoch);
            order.shuffle(&mut order_rng);
            let mut total = 0.0;
            let mut frames = 0usize;
            for &i in &order {
                let (x, y) = data[i];
                let mut state = self.initial_state();
                let mut start = 0;
                while start < x.len() {
                    let end = (start + window).min(x.len());
                    let masks = self.dropout_masks(&mut drop_rng, end - start);
                    let (tape, next) = self.run_chunk(x.data(), start, end, &state, Some(&masks));
                    let labels = &y.labels()[start..end];
                    let loss = ops::cross_entropy(&tape.probs, labels)?;
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!(
                            "LSTM loss became {loss} at epoch {epoch} (lr {lr})"
                        )));
                    }
                    total += loss * (end - start) as f64;
                    frames += end - start;
                    let mut grads = self.params.zeros_like();
                    self.backward_chunk(&tape, labels, &mut grads);
                    let norm = grads.global_norm();
                    if !norm.is_finite() {
                        return Err(Error::Numeric(format!("non-finite LSTM gradient at epoch {epoch}")));
                    }
                    if norm > opts.clip_norm {
                        grads.scale(opts.clip_norm / norm);
                    }
                    sgd_step(&mut self.params, &grads, lr);
                    state = next;
                    start = end;
                }
            }
            let mean = total / frames as f64;
            debug!("lstm epoch {epoch}: loss {mean:.5} lr {lr}");
            curve.push(mean);
        }
        info!(
            "lstm trained {} epochs, final loss {:.5}",
            opts.epochs,
            curve.last().copied().unwrap_or(f64::NAN)
        );
        Ok(curve)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_string(&self.config).expect("config serializes"),
            self.params.tensors().to_vec(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("expected an lstm checkpoint, found {}", ck.kind)));
        }
        let config: LstmConfig = serde_json::from_str(&ck.config)
            .map_err(|e| Error::config(format!("bad lstm config in checkpoint: {e}")))?;
        let mut m = Lstm::build(config, 0)?;
        m.params.load_from(&ck.tensors)?;
        Ok(m)
    }
}

fn two_mut(p: &mut ParamSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    let t = p.tensors_mut();
    let (lo, hi) = t.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

fn four_mut(
    p: &mut ParamSet,
    a: usize,
    b: usize,
    c: usize,
    d: usize,
) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
    // slots of one layer are consecutive: a < b < c < d
    let t = p.tensors_mut();
    let (ta, rest) = t[a..].split_first_mut().unwrap();
    let (tb, rest) = rest[b - a - 1..].split_first_mut().unwrap();
    let (tc, rest) = rest[c - b - 1..].split_first_mut().unwrap();
    let td = &mut rest[d - c - 1];
    (&mut ta.data, &mut tb.data, &mut tc.data, &mut td.data)
}

/// Domains searched by [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmGrid {
    pub learning_rates: Vec<f64>,
    pub hidden_layers: Vec<usize>,
    pub hidden_units: Vec<usize>,
    pub dropout_probs: Vec<f64>,
}

impl Default for LstmGrid {
    /// 2 x 2 x 4 x 2 grid over learning rate, depth, width and dropout.
    fn default() -> Self {
        LstmGrid {
            learning_rates: vec![0.5, 1.0],
            hidden_layers: vec![1, 2],
            hidden_units: vec![256, 512, 1024, 2048],
            dropout_probs: vec![0.0, 0.5],
        }
    }
}

impl LstmGrid {
    pub fn cells(&self, n_features: usize, n_states: usize, tbptt_window: usize) -> Vec<LstmConfig> {
        let mut out = Vec::new();
        for &initial_lr in &self.learning_rates {
            for &n_hidden_layers in &self.hidden_layers {
                for &hidden_units in &self.hidden_units {
                    for &dropout_prob in &self.dropout_probs {
                        out.push(LstmConfig {
                            n_hidden_layers,
                            hidden_units,
                            dropout_prob,
                            initial_lr,
                            n_features,
                            n_states,
                            tbptt_window,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Training/validation data of one grid-search fold.
pub struct ValidationFold<'a> {
    pub train: Vec<(&'a FeatureSequence, &'a StateSequence)>,
    pub val: Vec<(&'a FeatureSequence, &'a StateSequence)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridCell {
    pub config: LstmConfig,
    pub mean_val_accuracy: f64,
    pub n_parameters: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: LstmConfig,
    pub cells: Vec<GridCell>,
}

/// Exhaustive search ranked by mean validation frame accuracy; ties go to
/// fewer parameters, then the lower learning rate.
pub fn grid_search(
    grid: &LstmGrid,
    folds: &[ValidationFold<'_>],
    n_features: usize,
    n_states: usize,
    tbptt_window: usize,
    opts: &LstmTrainOptions,
) -> Result<GridSearchResult> {
    let configs = grid.cells(n_features, n_states, tbptt_window);
    if configs.is_empty() {
        return Err(Error::config("empty LSTM grid"));
    }
    if folds.is_empty() {
        return Err(Error::invalid("grid search needs at least one validation fold"));
    }
    let cells: Vec<Result<GridCell>> = configs
        .into_par_iter()
        .map(|config| {
            let mut acc_sum = 0.0;
            for fold in folds {
                let mut model = Lstm::build(config.clone(), opts.seed)?;
                model.train(&fold.train, opts)?;
                let mut hit = 0usize;
                let mut total = 0usize;
                for (x, y) in &fold.val {
                    let p = model.forward(x)?;
                    for t in 0..y.len() {
                        hit += (argmax(p.row(t)) == y.labels()[t]) as usize;
                    }
                    total += y.len();
                }
                acc_sum += 100.0 * hit as f64 / total.max(1) as f64;
            }
            Ok(GridCell {
                n_parameters: config.n_parameters(),
                mean_val_accuracy: acc_sum / folds.len() as f64,
                config,
            })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let best = cells
        .iter()
        .min_by(|a, b| {
            b.mean_val_accuracy
                .partial_cmp(&a.mean_val_accuracy)
                .unwrap()
                .then(a.n_parameters.cmp(&b.n_parameters))
                .then(a.config.initial_lr.partial_cmp(&b.config.initial_lr).unwrap())
        })
        .expect("non-empty grid")
        .config
        .clone();
    Ok(GridSearchResult { best, cells })
}
