//! Encoder-decoder temporal convolutional network.
//!
//! Encoder level `l`: conv + ReLU -> stride-2 max pool -> per-frame max
//! normalization. Decoder level: upsample x2 -> conv + ReLU -> normalization.
//! A time-distributed softmax layer produces per-frame state distributions.
//!
//! In causal mode every convolution is left padded with `k - 1` zeros and each
//! decoder upsampling is delayed by one frame, so the output at frame `t` is a
//! function of input frames `0..=t` only (bit-exact on prefixes).

use std::path::PathBuf;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSequence, ProbSeries, StateSequence};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ops::{self, ConvCache, NormCache, NormGrad, Padding, PoolCache};
use crate::nn::{Optimizer, OptimizerConfig, ParamSet};
use crate::seed;

pub const CHECKPOINT_KIND: &str = "tcn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub n_layers: usize,
    pub filters: Vec<usize>,
    pub kernel_seconds: f64,
    pub sample_rate_hz: f64,
    pub causal: bool,
    pub n_features: usize,
    pub n_states: usize,
    #[serde(default)]
    pub norm_grad: NormGrad,
}

impl TcnConfig {
    /// Vision model, suturing task: L=3, F={32,64,96}, k=6.1 s, non-causal.
    pub fn suturing_vision(n_features: usize, sample_rate_hz: f64) -> Self {
        TcnConfig {
            n_layers: 3,
            filters: vec![32, 64, 96],
            kernel_seconds: 6.1,
            sample_rate_hz,
            causal: false,
            n_features,
            n_states: 9,
            norm_grad: NormGrad::StopGradient,
        }
    }

    /// Vision model, ultrasound task: L=3, F={32,64,96}, k=3.4 s, causal.
    pub fn rious_vision(n_features: usize, sample_rate_hz: f64) -> Self {
        TcnConfig {
            kernel_seconds: 3.4,
            causal: true,
            n_states: 8,
            ..TcnConfig::suturing_vision(n_features, sample_rate_hz)
        }
    }

    /// Kinematics variant of a vision config: L=2, F={64,96}.
    pub fn kinematics_from(vision: &TcnConfig, n_features: usize) -> Self {
        TcnConfig {
            n_layers: 2,
            filters: vec![64, 96],
            n_features,
            ..vision.clone()
        }
    }

    /// Kernel length in frames: `round(k_s * rate)`, bumped to the next odd value.
    pub fn kernel_frames(&self) -> usize {
        let k = (self.kernel_seconds * self.sample_rate_hz).round().max(1.0) as usize;
        if k % 2 == 0 {
            k + 1
        } else {
            k
        }
    }

    pub fn padding(&self) -> Padding {
        if self.causal {
            Padding::Causal
        } else {
            Padding::Same
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("TCN needs at least one layer"));
        }
        if self.filters.len() != self.n_layers {
            return Err(Error::config(format!(
                "{} filter counts given for {} layers",
                self.filters.len(),
                self.n_layers
            )));
        }
        if self.filters.contains(&0) {
            return Err(Error::config("filter counts must be positive"));
        }
        if !(self.kernel_seconds > 0.0 && self.kernel_seconds.is_finite()) {
            return Err(Error::config("kernel_seconds must be positive"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features must be positive"));
        }
        if self.n_states < 2 {
            return Err(Error::config("n_states must be at least 2"));
        }
        Ok(())
    }

    fn decoder_filters(&self) -> Vec<usize> {
        self.filters.iter().rev().copied().collect()
    }
}

#[derive(Clone, Debug)]
struct Slots {
    enc: Vec<(usize, usize)>,
    dec: Vec<(usize, usize)>,
    head: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct Tcn {
    config: TcnConfig,
    k: usize,
    params: ParamSet,
    slots: Slots,
}

/// Intermediate values kept for the backward pass.
struct Tape {
    enc_conv: Vec<ConvCache>,
    enc_pool: Vec<PoolCache>,
    enc_norm: Vec<NormCache>,
    enc_lens: Vec<usize>,
    dec_conv: Vec<ConvCache>,
    dec_norm: Vec<NormCache>,
    dec_in_lens: Vec<usize>,
    features: Matrix,
    probs: Matrix,
}

impl Tcn {
    /// Builds a model with deterministic random weights.
    pub fn build(config: TcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_frames();
        let mut params = ParamSet::new();
        let mut rng = seed::stream(seed, "tcn/init");
        let mut enc = Vec::new();
        let mut f_in = config.n_features;
        for (l, &f) in config.filters.iter().enumerate() {
            let w = params.add(format!("enc{l}.w"), &[f, k, f_in]);
            let b = params.add(format!("enc{l}.b"), &[f]);
            params.init_he(w, k * f_in, &mut rng);
            enc.push((w, b));
            f_in = f;
        }
        let mut dec = Vec::new();
        for (i, f) in config.decoder_filters().into_iter().enumerate() {
            let w = params.add(format!("dec{i}.w"), &[f, k, f_in]);
            let b = params.add(format!("dec{i}.b"), &[f]);
            params.init_he(w, k * f_in, &mut rng);
            dec.push((w, b));
            f_in = f;
        }
        let hw = params.add("head.w", &[config.n_states, f_in]);
        let hb = params.add("head.b", &[config.n_states]);
        params.init_normal(hw, (1.0 / f_in as f64).sqrt(), &mut rng);
        Ok(Tcn {
            config,
            k,
            params,
            slots: Slots {
                enc,
                dec,
                head: (hw, hb),
            },
        })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.config
    }

    pub fn kernel_frames(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Same parameters under the other padding policy.
    pub fn with_causal(&self, causal: bool) -> Tcn {
        let mut m = self.clone();
        m.config.causal = causal;
        m
    }

    pub fn forward(&self, x: &FeatureSequence) -> Result<ProbSeries> {
        self.check_input(x)?;
        let tape = self.run(x.data(), None)?;
        ProbSeries::new(tape.probs)
    }

    /// Forward on a raw `T x N` matrix.
    pub fn forward_matrix(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.n_features {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.config.n_features
            )));
        }
        Ok(self.run(x, None)?.probs)
    }

    fn check_input(&self, x: &FeatureSequence) -> Result<()> {
        if x.n_features() != self.config.n_features {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.n_features(),
                self.config.n_features
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Matrix, frozen: Option<&[Vec<f64>]>) -> Result<Tape> {
        if x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let pad = self.config.padding();
        let delayed = self.config.causal;
        let n_layers = self.config.n_layers;
        let mut tape = Tape {
            enc_conv: Vec::with_capacity(n_layers),
            enc_pool: Vec::with_capacity(n_layers),
            enc_norm: Vec::with_capacity(n_layers),
            enc_lens: Vec::with_capacity(n_layers),
            dec_conv: Vec::with_capacity(n_layers),
            dec_norm: Vec::with_capacity(n_layers),
            dec_in_lens: Vec::with_capacity(n_layers),
            features: Matrix::zeros(0, 0),
            probs: Matrix::zeros(0, 0),
        };
        let mut frozen_iter = frozen.map(|f| f.iter());
        let mut next_frozen = || frozen_iter.as_mut().and_then(|it| it.next()).map(Vec::as_slice);

        let mut h = x.clone();
        for &(w, b) in &self.slots.enc {
            tape.enc_lens.push(h.rows());
            let (c, cc) = ops::conv1d_relu(&h, self.params.get(w), self.params.get(b), self.k, pad)?;
            let (p, pc) = ops::maxpool2_cached(&c);
            let (n, nc) = ops::normalize_cached(&p, next_frozen());
            tape.enc_conv.push(cc);
            tape.enc_pool.push(pc);
            tape.enc_norm.push(nc);
            h = n;
        }
        for (i, &(w, b)) in self.slots.dec.iter().enumerate() {
            let target = tape.enc_lens[n_layers - 1 - i];
            tape.dec_in_lens.push(h.rows());
            let u = ops::upsample2_to(&h, target, delayed);
            let (c, cc) = ops::conv1d_relu(&u, self.params.get(w), self.params.get(b), self.k, pad)?;
            let (n, nc) = ops::normalize_cached(&c, next_frozen());
            tape.dec_conv.push(cc);
            tape.dec_norm.push(nc);
            h = n;
        }
        let (hw, hb) = self.slots.head;
        let logits = ops::dense_logits(&h, self.params.get(hw), self.params.get(hb))?;
        tape.probs = ops::softmax_rows(&logits);
        tape.features = h;
        Ok(tape)
    }

    fn backward(&self, tape: &Tape, labels: &[usize], grads: &mut ParamSet) {
        let mode = self.config.norm_grad;
        let delayed = self.config.causal;
        let g_logits = ops::softmax_ce_grad(&tape.probs, labels);
        let (hw, hb) = self.slots.head;
        let (dw, db) = split_two(grads, hw, hb);
        let mut g = ops::dense_backward(&tape.features, &g_logits, self.params.get(hw), dw, db);

        for i in (0..self.slots.dec.len()).rev() {
            let (w, b) = self.slots.dec[i];
            g = ops::normalize_backward(&g, &tape.dec_norm[i], mode);
            let (dw, db) = split_two(grads, w, b);
            g = ops::conv1d_relu_backward(&g, &tape.dec_conv[i], self.params.get(w), self.k, dw, db);
            g = ops::upsample2_backward(&g, tape.dec_in_lens[i], delayed);
        }
        for l in (0..self.slots.enc.len()).rev() {
            let (w, b) = self.slots.enc[l];
            g = ops::normalize_backward(&g, &tape.enc_norm[l], mode);
            g = ops::maxpool2_backward(&g, &tape.enc_pool[l]);
            let (dw, db) = split_two(grads, w, b);
            g = ops::conv1d_relu_backward(&g, &tape.enc_conv[l], self.params.get(w), self.k, dw, db);
        }
    }

    /// Mean cross-entropy of one sequence and its parameter gradient.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, ParamSet)> {
        if x.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} frames vs {} labels",
                x.rows(),
                labels.len()
            )));
        }
        let tape = self.run(x, None)?;
        let loss = ops::cross_entropy(&tape.probs, labels)?;
        let mut grads = self.params.zeros_like();
        self.backward(&tape, labels, &mut grads);
        Ok((loss, grads))
    }

    /// Loss with normalization denominators pinned to `frozen` (one vector
    /// per normalization layer, encoder first). Finite differences of this
    /// function are the reference for the stop-gradient backward pass.
    pub fn loss_with_frozen_denominators(
        &self,
        x: &Matrix,
        labels: &[usize],
        frozen: &[Vec<f64>],
    ) -> Result<f64> {
        let tape = self.run(x, Some(frozen))?;
        ops::cross_entropy(&tape.probs, labels)
    }

    /// Normalization denominators of a forward pass, encoder layers first.
    pub fn denominators(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        let tape = self.run(x, None)?;
        Ok(tape
            .enc_norm
            .iter()
            .chain(&tape.dec_norm)
            .map(|c| c.denominators().to_vec())
            .collect())
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let tape = self.run(x, None)?;
        ops::cross_entropy(&tape.probs, labels)
    }

    /// Smallest distance from any ReLU pre-activation to zero, and from any
    /// max-pool or normalization winner to its runner-up. Used to keep
    /// finite-difference probes away from kinks.
    pub fn kink_margin(&self, x: &Matrix) -> Result<f64> {
        let pad = self.config.padding();
        let delayed = self.config.causal;
        let mut margin = f64::INFINITY;
        let mut h = x.clone();
        let mut lens = Vec::new();
        let mut conv_margin = |h: &Matrix, w: &[f64], b: &[f64]| -> Matrix {
            let raw = raw_conv(h, w, b, self.k, pad);
            for v in raw.as_slice() {
                margin = margin.min(v.abs());
            }
            raw_relu(&raw)
        };
        let mut tie_margins = Vec::new();
        for &(w, b) in &self.slots.enc {
            lens.push(h.rows());
            let c = conv_margin(&h, self.params.get(w), self.params.get(b));
            tie_margins.push(pool_margin(&c));
            let (p, _) = ops::maxpool2_cached(&c);
            tie_margins.push(row_max_margin(&p));
            h = ops::normalize_cached(&p, None).0;
        }
        for (i, &(w, b)) in self.slots.dec.iter().enumerate() {
            let target = lens[lens.len() - 1 - i];
            let u = ops::upsample2_to(&h, target, delayed);
            let c = conv_margin(&u, self.params.get(w), self.params.get(b));
            tie_margins.push(row_max_margin(&c));
            h = ops::normalize_cached(&c, None).0;
        }
        Ok(tie_margins.into_iter().fold(margin, f64::min))
    }

    /// Trains on `(features, labels)` pairs with mini-batch gradient descent.
    pub fn train(
        &mut self,
        data: &[(&FeatureSequence, &StateSequence)],
        opts: &TcnTrainOptions,
    ) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        for (x, y) in data {
            self.check_input(x)?;
            if x.len() != y.len() {
                return Err(Error::shape(format!(
                    "{} frames vs {} labels",
                    x.len(),
                    y.len()
                )));
            }
            if let Some(&l) = y.labels().iter().find(|&&l| l >= self.config.n_states) {
                return Err(Error::invalid(format!(
                    "label {l} outside {} states",
                    self.config.n_states
                )));
            }
        }
        opts.optimizer.validate()?;
        let mut optimizer = Optimizer::new(opts.optimizer);
        let mut rng = seed::stream(opts.seed, "tcn/shuffle");
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut report = TrainReport::default();
        let batch = opts.batch_size.max(1);
        for epoch in 0..opts.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                let results: Vec<Result<(f64, ParamSet)>> = chunk
                    .par_iter()
                    .map(|&i| self.loss_and_grad(data[i].0.data(), data[i].1.labels()))
                    .collect();
                let mut total = self.params.zeros_like();
                for r in results {
                    let (loss, g) = r?;
                    epoch_loss += loss;
                    total.accumulate(&g);
                }
                total.scale(1.0 / chunk.len() as f64);
                if !total.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite TCN gradient at epoch {epoch}"
                    )));
                }
                optimizer.step(&mut self.params, &total);
            }
            let mean = epoch_loss / data.len() as f64;
            if !mean.is_finite() {
                return Err(Error::Numeric(format!(
                    "TCN loss became {mean} at epoch {epoch} (lr {})",
                    optimizer.learning_rate()
                )));
            }
            debug!("tcn epoch {epoch}: loss {mean:.5}");
            report.loss_curve.push(mean);
            if let Some(dir) = &opts.checkpoint_dir {
                let path = dir.join(format!("tcn_epoch{epoch:03}.ckpt"));
                self.to_checkpoint().save(&path)?;
            }
        }
        info!(
            "tcn trained {} epochs, final loss {:.5}",
            opts.epochs,
            report.loss_curve.last().copied().unwrap_or(f64::NAN)
        );
        Ok(report)
    }

    /// Number of past frames an output can depend on in causal mode, computed
    /// by tracing the earliest reachable input through every layer.
    pub fn receptive_field(&self) -> usize {
        let levels = self.config.n_layers;
        let period = 1usize << (levels + 1);
        let base = (self.k as i64 + 4) * (period as i64) * 4;
        let mut lag = 0i64;
        for r in 0..period as i64 {
            let t = base + r;
            lag = lag.max(t - self.earliest_input(t));
        }
        lag as usize
    }

    fn earliest_input(&self, t: i64) -> i64 {
        let levels = self.config.n_layers;
        let delayed = self.config.causal;
        let left = self.config.padding().left(self.k) as i64;
        // decoder, finest level first
        let mut e = t;
        for _ in 0..levels {
            e -= left; // conv window start
            e = if delayed {
                (e - 1).div_euclid(2)
            } else {
                e.div_euclid(2)
            };
        }
        // encoder, coarsest level first
        for _ in 0..levels {
            e *= 2; // first frame of the pooled pair
            e -= left;
        }
        e
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
            return Err(Error::config(format!("expected a tcn checkpoint, found {}", ck.kind)));
        }
        let config: TcnConfig = serde_json::from_str(&ck.config)
            .map_err(|e| Error::config(format!("bad tcn config in checkpoint: {e}")))?;
        let mut m = Tcn::build(config, 0)?;
        m.params.load_from(&ck.tensors)?;
        Ok(m)
    }
}

fn split_two(grads: &mut ParamSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let tensors = grads.tensors_mut();
    let (lo, hi) = tensors.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

fn raw_conv(input: &Matrix, w: &[f64], b: &[f64], k: usize, pad: Padding) -> Matrix {
    let f_in = input.cols();
    let f_out = b.len();
    let left = pad.left(k);
    let t_len = input.rows();
    let mut out = Matrix::zeros(t_len, f_out);
    for t in 0..t_len {
        for f in 0..f_out {
            let mut z = b[f];
            for dk in 0..k {
                let src = t as isize + dk as isize - left as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let row = input.row(src as usize);
                for c in 0..f_in {
                    z += w[(f * k + dk) * f_in + c] * row[c];
                }
            }
            out.set(t, f, z);
        }
    }
    out
}

fn raw_relu(m: &Matrix) -> Matrix {
    let mut o = m.clone();
    for v in o.as_mut_slice() {
        *v = v.max(0.0);
    }
    o
}

fn pool_margin(c: &Matrix) -> f64 {
    let mut m = f64::INFINITY;
    let t_len = c.rows();
    for j in 0..t_len / 2 {
        for ch in 0..c.cols() {
            let (a, b) = (c.get(2 * j, ch), c.get(2 * j + 1, ch));
            // two dead units tie at exactly zero; their gradient is zero either way
            if a > 0.0 || b > 0.0 {
                m = m.min((a - b).abs());
            }
        }
    }
    m
}

fn row_max_margin(c: &Matrix) -> f64 {
    let mut m = f64::INFINITY;
    for row in c.iter_rows() {
        let mut sorted: Vec<f64> = row.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted.len() >= 2 && sorted[0] > 0.0 {
            m = m.min(sorted[0] - sorted[1]);
        }
    }
    m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TcnTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TcnTrainOptions {
    fn default() -> Self {
        TcnTrainOptions {
            epochs: 30,
            batch_size: 4,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sequence loss for each epoch.
    pub loss_curve: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_differences, max_relative_error, FD_STEP};
    use rand::Rng as _;

    fn small(causal: bool, norm_grad: NormGrad) -> TcnConfig {
        TcnConfig {
            n_layers: 2,
            filters: vec![3, 4],
            kernel_seconds: 0.3,
            sample_rate_hz: 10.0,
            causal,
            n_features: 2,
            n_states: 3,
            norm_grad,
        }
    }

    fn random_input(rng: &mut seed::Rng, t: usize, n: usize) -> Matrix {
        Matrix::from_vec(t, n, (0..t * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_conversion() {
        let c = TcnConfig::suturing_vision(26, 30.0);
        assert_eq!(c.kernel_frames(), 183);
        let r = TcnConfig::rious_vision(19, 10.0);
        assert_eq!(r.kernel_frames(), 35);
        let mut even = small(true, NormGrad::StopGradient);
        even.kernel_seconds = 0.4;
        assert_eq!(even.kernel_frames(), 5);
    }

    #[test]
    fn published_configs_build_and_zero_layers_fail() {
        let jig = TcnConfig::suturing_vision(26, 10.0);
        assert_eq!(jig.n_states, 9);
        assert!(Tcn::build(jig, 0).is_ok());
        let rious = TcnConfig::rious_vision(19, 10.0);
        assert_eq!(rious.n_states, 8);
        assert!(Tcn::build(TcnConfig::kinematics_from(&rious, 19), 0).is_ok());
        let mut bad = small(true, NormGrad::StopGradient);
        bad.n_layers = 0;
        bad.filters.clear();
        assert!(Tcn::build(bad, 0).is_err());
    }

    #[test]
    fn length_preserved_and_rows_stochastic() {
        for causal in [true, false] {
            let m = Tcn::build(small(causal, NormGrad::StopGradient), 2).unwrap();
            let mut rng = seed::stream(9, "len");
            for t in 1..=13 {
                let x = FeatureSequence::new(random_input(&mut rng, t, 2), 10.0).unwrap();
                let p = m.forward(&x).unwrap();
                assert_eq!(p.len(), t);
                for r in 0..t {
                    assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn feature_mismatch_errors() {
        let m = Tcn::build(small(false, NormGrad::StopGradient), 2).unwrap();
        let x = FeatureSequence::new(Matrix::zeros(5, 3), 10.0).unwrap();
        assert!(m.forward(&x).is_err());
    }

    #[test]
    fn causal_prefix_is_exact() {
        let m = Tcn::build(small(true, NormGrad::StopGradient), 4).unwrap();
        let mut rng = seed::stream(5, "prefix");
        let x = random_input(&mut rng, 37, 2);
        let full = m.forward_matrix(&x).unwrap();
        for t in 1..=37 {
            let part = m.forward_matrix(&x.slice_rows(0, t)).unwrap();
            assert_eq!(part.as_slice(), full.slice_rows(0, t).as_slice(), "prefix {t}");
        }
    }

    #[test]
    fn receptive_field_bounds_dependence() {
        let m = Tcn::build(small(true, NormGrad::StopGradient), 4).unwrap();
        let rf = m.receptive_field();
        let mut rng = seed::stream(6, "rf");
        let x = random_input(&mut rng, 60, 2);
        let full = m.forward_matrix(&x).unwrap();
        // perturbing frames older than the receptive field leaves the last row unchanged
        let t = 59;
        let mut y = x.clone();
        for s in 0..(t - rf) {
            y.row_mut(s).iter_mut().for_each(|v| *v += 3.0);
        }
        let out = m.forward_matrix(&y).unwrap();
        assert_eq!(out.row(t), full.row(t));
    }

    #[test]
    fn constant_input_gives_near_constant_interior() {
        let m = Tcn::build(small(false, NormGrad::StopGradient), 8).unwrap();
        let x = FeatureSequence::new(Matrix::filled(64, 2, 0.7), 10.0).unwrap();
        let p = m.forward(&x).unwrap();
        // away from both boundaries (beyond the receptive field) the rows agree
        let ref_row = p.row(32).to_vec();
        for t in 24..40 {
            for (a, b) in p.row(t).iter().zip(&ref_row) {
                assert!((a - b).abs() < 1e-9, "row {t}");
            }
        }
    }

    fn gradcheck(causal: bool, mode: NormGrad, seed_base: u64) -> f64 {
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut s = seed_base;
        while checked < 3 {
            s += 1;
            let mut m = Tcn::build(small(causal, mode), s).unwrap();
            let mut rng = seed::stream(s, "gc");
            // zero biases put padded frames exactly on the ReLU kink
            let jitter: Vec<f64> = m.params().flatten().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            m.params_mut().assign_flat(&jitter);
            let t = rng.random_range(5..=12);
            let x = random_input(&mut rng, t, 2);
            let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..3)).collect();
            if m.kink_margin(&x).unwrap() < 1e-3 {
                continue;
            }
            let (_, g) = m.loss_and_grad(&x, &labels).unwrap();
            let flat = m.params().flatten();
            let frozen = m.denominators(&x).unwrap();
            let mut probe = m.clone();
            let num = central_differences(&flat, FD_STEP, |p| {
                probe.params_mut().assign_flat(p);
                match mode {
                    NormGrad::Full => probe.loss(&x, &labels).unwrap(),
                    NormGrad::StopGradient => {
                        probe.loss_with_frozen_denominators(&x, &labels, &frozen).unwrap()
                    }
                }
            });
            worst = worst.max(max_relative_error(&g.flatten(), &num).0);
            checked += 1;
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for causal in [true, false] {
            for mode in [NormGrad::StopGradient, NormGrad::Full] {
                let e = gradcheck(causal, mode, 100);
                assert!(e <= 1e-4, "causal={causal} {mode:?}: {e}");
            }
        }
    }

    fn two_state_data() -> (FeatureSequence, StateSequence) {
        let labels: Vec<usize> = (0..40).map(|t| (t / 10) % 2).collect();
        let rows: Vec<Vec<f64>> = labels.iter().map(|&l| vec![l as f64, 1.0 - l as f64]).collect();
        (
            FeatureSequence::new(Matrix::from_rows(&rows).unwrap(), 10.0).unwrap(),
            StateSequence::from_labels(labels),
        )
    }

    #[test]
    fn zero_lr_and_determinism() {
        let (x, y) = two_state_data();
        let mut m = Tcn::build(small(true, NormGrad::StopGradient), 1).unwrap();
        let before = m.params().clone();
        let opts = TcnTrainOptions {
            epochs: 3,
            optimizer: OptimizerConfig::adam(0.0),
            ..Default::default()
        };
        m.train(&[(&x, &y)], &opts).unwrap();
        assert_eq!(m.params(), &before);

        let opts = TcnTrainOptions { epochs: 3, ..Default::default() };
        let mut a = Tcn::build(small(true, NormGrad::StopGradient), 1).unwrap();
        let mut b = a.clone();
        let ra = a.train(&[(&x, &y), (&x, &y)], &opts).unwrap();
        let rb = b.train(&[(&x, &y), (&x, &y)], &opts).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
    }

    #[test]
    fn empty_training_set_errors() {
        let mut m = Tcn::build(small(true, NormGrad::StopGradient), 1).unwrap();
        assert!(m.train(&[], &TcnTrainOptions::default()).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_padding_swap() {
        let m = Tcn::build(small(false, NormGrad::StopGradient), 3).unwrap();
        let back = Tcn::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back.params(), m.params());
        let c = m.with_causal(true);
        assert_eq!(c.params(), m.params());
        assert!(c.config().causal);
    }
}
