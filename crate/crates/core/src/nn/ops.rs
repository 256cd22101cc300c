//! Layer primitives on frame-major activations (`T x F` matrices).
//!
//! Each layer has a forward pass that returns a cache and a backward pass
//! that consumes it. Convolution weights are laid out `[out][tap][in]`, so the
//! kernel of one output channel is a contiguous `k * F_in` slice that lines up
//! with a contiguous window of the padded input.

use serde::{Deserialize, Serialize};

use crate::domain::{ProbSeries, StateSequence};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};

/// Guard added to the per-frame maximum in [`channel_max_normalize`].
pub const NORM_EPS: f64 = 1e-5;

/// Floor applied inside the log of the cross-entropy loss.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// `k - 1` zeros on the left: output `t` sees inputs `t-k+1 ..= t`.
    Causal,
    /// `(k - 1) / 2` zeros on each side (k odd).
    Same,
}

impl Padding {
    pub fn left(self, k: usize) -> usize {
        match self {
            Padding::Causal => k - 1,
            Padding::Same => (k - 1) / 2,
        }
    }
}

/// How the normalization denominator is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormGrad {
    /// Treat `max(E_t) + eps` as a constant.
    #[default]
    StopGradient,
    /// Also route gradient through the (sub)derivative of the max.
    Full,
}

#[derive(Clone, Debug)]
pub struct ConvCache {
    padded: Matrix,
    out: Matrix,
    left: usize,
}

/// Convolution along time followed by ReLU.
///
/// `w` is `[f_out][k][f_in]`, `b` has `f_out` entries. Output length equals
/// input length for both padding policies.
pub fn conv1d_relu(
    input: &Matrix,
    w: &[f64],
    b: &[f64],
    k: usize,
    padding: Padding,
) -> Result<(Matrix, ConvCache)> {
    let f_in = input.cols();
    let f_out = b.len();
    if k == 0 || w.len() != f_out * k * f_in {
        return Err(Error::shape(format!(
            "conv weight has {} values, expected {f_out}x{k}x{f_in}",
            w.len()
        )));
    }
    if padding == Padding::Same && k % 2 == 0 {
        return Err(Error::shape(format!("same padding needs an odd kernel, got {k}")));
    }
    let t_len = input.rows();
    let left = padding.left(k);
    let mut padded = Matrix::zeros(t_len + k - 1, f_in);
    padded.as_mut_slice()[left * f_in..(left + t_len) * f_in].copy_from_slice(input.as_slice());

    let span = k * f_in;
    let mut out = Matrix::zeros(t_len, f_out);
    let pad = padded.as_slice();
    for t in 0..t_len {
        let window = &pad[t * f_in..t * f_in + span];
        let row = out.row_mut(t);
        for (f, o) in row.iter_mut().enumerate() {
            let z = dot(window, &w[f * span..(f + 1) * span]) + b[f];
            *o = if z > 0.0 { z } else { 0.0 };
        }
    }
    let cache = ConvCache {
        padded,
        out: out.clone(),
        left,
    };
    Ok((out, cache))
}

/// Accumulates weight/bias gradients and returns the input gradient.
pub fn conv1d_relu_backward(
    grad_out: &Matrix,
    cache: &ConvCache,
    w: &[f64],
    k: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Matrix {
    let f_in = cache.padded.cols();
    let f_out = db.len();
    let t_len = grad_out.rows();
    let span = k * f_in;
    let mut grad_pad = vec![0.0; cache.padded.rows() * f_in];
    let pad = cache.padded.as_slice();
    for t in 0..t_len {
        let g_row = grad_out.row(t);
        let o_row = cache.out.row(t);
        for f in 0..f_out {
            if o_row[f] <= 0.0 {
                continue;
            }
            let g = g_row[f];
            if g == 0.0 {
                continue;
            }
            db[f] += g;
            axpy(g, &pad[t * f_in..t * f_in + span], &mut dw[f * span..(f + 1) * span]);
            axpy(g, &w[f * span..(f + 1) * span], &mut grad_pad[t * f_in..t * f_in + span]);
        }
    }
    let start = cache.left * f_in;
    Matrix::from_vec(t_len, f_in, grad_pad[start..start + t_len * f_in].to_vec())
        .expect("slice has exact size")
}

/// Convolution + ReLU without a cache.
pub fn conv1d_forward(
    input: &Matrix,
    w: &[f64],
    b: &[f64],
    k: usize,
    padding: Padding,
) -> Result<Matrix> {
    conv1d_relu(input, w, b, k, padding).map(|(o, _)| o)
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    in_rows: usize,
    // 0 or 1: which frame of the pair won, per output entry
    choice: Vec<u8>,
}

/// Stride-2 max pooling. Odd lengths repeat the final frame, so the output has
/// `ceil(T / 2)` frames. Works for any `T >= 1`.
pub fn maxpool2_cached(input: &Matrix) -> (Matrix, PoolCache) {
    let t_len = input.rows();
    let f = input.cols();
    let out_len = t_len.div_ceil(2);
    let mut out = Matrix::zeros(out_len, f);
    let mut choice = vec![0u8; out_len * f];
    for j in 0..out_len {
        let a = input.row(2 * j);
        let b = input.row((2 * j + 1).min(t_len - 1));
        let row = out.row_mut(j);
        for c in 0..f {
            // ties go to the earlier frame
            if b[c] > a[c] {
                row[c] = b[c];
                choice[j * f + c] = 1;
            } else {
                row[c] = a[c];
            }
        }
    }
    (
        out,
        PoolCache {
            in_rows: t_len,
            choice,
        },
    )
}

pub fn maxpool2_backward(grad_out: &Matrix, cache: &PoolCache) -> Matrix {
    let f = grad_out.cols();
    let mut grad = Matrix::zeros(cache.in_rows, f);
    for j in 0..grad_out.rows() {
        for c in 0..f {
            let src = 2 * j + cache.choice[j * f + c] as usize;
            // a padded duplicate routes back to the real final frame
            let src = src.min(cache.in_rows - 1);
            let g = grad_out.get(j, c);
            let v = grad.get(src, c);
            grad.set(src, c, v + g);
        }
    }
    grad
}

/// Stride-2 max pooling; errors when fewer than two frames are given.
pub fn maxpool2(input: &Matrix) -> Result<Matrix> {
    if input.rows() < 2 {
        return Err(Error::shape(format!(
            "max pooling needs at least 2 frames, got {}",
            input.rows()
        )));
    }
    Ok(maxpool2_cached(input).0)
}

/// Repeats each frame twice: `[a, b] -> [a, a, b, b]`.
pub fn upsample2(input: &Matrix) -> Matrix {
    upsample2_to(input, 2 * input.rows(), false)
}

/// Upsampling cropped (or extended) to `out_len` frames.
///
/// With `delayed` set, output frame `s` copies input frame `(s - 1) / 2` and
/// frame 0 is zero. A pooled frame summarizes source frames `2j` and `2j + 1`,
/// so the one-frame delay keeps every output from reading a later source frame.
pub fn upsample2_to(input: &Matrix, out_len: usize, delayed: bool) -> Matrix {
    let f = input.cols();
    let mut out = Matrix::zeros(out_len, f);
    for s in 0..out_len {
        if let Some(j) = upsample_source(s, delayed) {
            if j < input.rows() {
                out.row_mut(s).copy_from_slice(input.row(j));
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Matrix, in_rows: usize, delayed: bool) -> Matrix {
    let f = grad_out.cols();
    let mut grad = Matrix::zeros(in_rows, f);
    for s in 0..grad_out.rows() {
        if let Some(j) = upsample_source(s, delayed) {
            if j < in_rows {
                axpy(1.0, grad_out.row(s), grad.row_mut(j));
            }
        }
    }
    grad
}

#[inline]
fn upsample_source(s: usize, delayed: bool) -> Option<usize> {
    if delayed {
        s.checked_sub(1).map(|p| p / 2)
    } else {
        Some(s / 2)
    }
}

/// `e / (max(e) + eps)` for one frame.
pub fn channel_max_normalize(e: &[f64]) -> Vec<f64> {
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let d = m + NORM_EPS;
    e.iter().map(|v| v / d).collect()
}

#[derive(Clone, Debug)]
pub struct NormCache {
    input: Matrix,
    denom: Vec<f64>,
    argmax: Vec<usize>,
}

impl NormCache {
    pub fn denominators(&self) -> &[f64] {
        &self.denom
    }
}

/// Per-frame max normalization. `frozen` substitutes externally supplied
/// denominators (used to finite-difference the stop-gradient variant).
pub fn normalize_cached(input: &Matrix, frozen: Option<&[f64]>) -> (Matrix, NormCache) {
    let mut out = input.clone();
    let mut denom = Vec::with_capacity(input.rows());
    let mut arg = Vec::with_capacity(input.rows());
    for t in 0..input.rows() {
        let row = input.row(t);
        let am = crate::matrix::argmax(row);
        let d = match frozen {
            Some(fz) => fz[t],
            None => row[am] + NORM_EPS,
        };
        for v in out.row_mut(t) {
            *v /= d;
        }
        denom.push(d);
        arg.push(am);
    }
    (
        out,
        NormCache {
            input: input.clone(),
            denom,
            argmax: arg,
        },
    )
}

pub fn normalize_backward(grad_out: &Matrix, cache: &NormCache, mode: NormGrad) -> Matrix {
    let mut grad = Matrix::zeros(grad_out.rows(), grad_out.cols());
    for t in 0..grad_out.rows() {
        let d = cache.denom[t];
        let g = grad_out.row(t);
        let row = grad.row_mut(t);
        for (r, gi) in row.iter_mut().zip(g) {
            *r = gi / d;
        }
        if mode == NormGrad::Full {
            let s = dot(g, cache.input.row(t));
            row[cache.argmax[t]] -= s / (d * d);
        }
    }
    grad
}

/// Row-wise softmax of `x W^T + b`, `w` is `[n_states][f]`.
pub fn dense_logits(x: &Matrix, w: &[f64], b: &[f64]) -> Result<Matrix> {
    let f = x.cols();
    let n = b.len();
    if w.len() != n * f {
        return Err(Error::shape(format!(
            "dense weight has {} values, expected {n}x{f}",
            w.len()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), n);
    for t in 0..x.rows() {
        let xr = x.row(t);
        let row = out.row_mut(t);
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(xr, &w[j * f..(j + 1) * f]) + b[j];
        }
    }
    Ok(out)
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        softmax_in_place(out.row_mut(t));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Time-distributed dense layer with softmax.
pub fn softmax_dense(x: &Matrix, w: &[f64], b: &[f64]) -> Result<ProbSeries> {
    ProbSeries::new(softmax_rows(&dense_logits(x, w, b)?))
}

/// Gradient of the dense layer given `dL/dlogits`; returns `dL/dx`.
pub fn dense_backward(
    x: &Matrix,
    grad_logits: &Matrix,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Matrix {
    let f = x.cols();
    let mut grad_x = Matrix::zeros(x.rows(), f);
    for t in 0..x.rows() {
        let g = grad_logits.row(t);
        let xr = x.row(t);
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            db[j] += gj;
            axpy(gj, xr, &mut dw[j * f..(j + 1) * f]);
            axpy(gj, &w[j * f..(j + 1) * f], grad_x.row_mut(t));
        }
    }
    grad_x
}

/// Mean over frames of `-ln p[t][gt[t]]`, floored at [`LOG_FLOOR`].
pub fn cross_entropy_loss(pred: &ProbSeries, gt: &StateSequence) -> Result<f64> {
    cross_entropy(pred.matrix(), gt.labels())
}

pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} prediction rows vs {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut s = 0.0;
    for (t, &l) in labels.iter().enumerate() {
        if l >= probs.cols() {
            return Err(Error::shape(format!("label {l} outside {} states", probs.cols())));
        }
        s -= probs.get(t, l).max(LOG_FLOOR).ln();
    }
    Ok(s / labels.len() as f64)
}

/// `dL/dlogits` of the mean cross-entropy for softmax outputs: `(p - onehot) / T`.
pub fn softmax_ce_grad(probs: &Matrix, labels: &[usize]) -> Matrix {
    let scale = 1.0 / labels.len() as f64;
    let mut g = probs.clone();
    for (t, &l) in labels.iter().enumerate() {
        let row = g.row_mut(t);
        row[l] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn kernel_one_identity_is_relu() {
        let x = Matrix::from_rows(&[[1.5], [-2.0], [0.25]]).unwrap();
        let y = conv1d_forward(&x, &[1.0], &[0.0], 1, Padding::Same).unwrap();
        assert_eq!(y.as_slice(), &[1.5, 0.0, 0.25]);
    }

    #[test]
    fn negative_preactivations_give_zero() {
        let x = Matrix::filled(5, 2, 1.0);
        let y = conv1d_forward(&x, &[0.5; 2 * 3 * 2], &[-10.0, -10.0], 3, Padding::Same).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    // Brute-force triple loop straight from the definition.
    fn conv_oracle(x: &Matrix, w: &[f64], b: &[f64], k: usize, left: usize) -> Matrix {
        let (t_len, f_in, f_out) = (x.rows(), x.cols(), b.len());
        let mut out = Matrix::zeros(t_len, f_out);
        for t in 0..t_len {
            for f in 0..f_out {
                let mut z = b[f];
                for dk in 0..k {
                    let src = t as isize + dk as isize - left as isize;
                    if src < 0 || src >= t_len as isize {
                        continue;
                    }
                    for c in 0..f_in {
                        z += w[(f * k + dk) * f_in + c] * x.get(src as usize, c);
                    }
                }
                out.set(t, f, z.max(0.0));
            }
        }
        out
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(pad, left) in &[(Padding::Same, 1usize), (Padding::Causal, 2usize)] {
            let x = rand_matrix(&mut rng, 4, 3);
            let w: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = [0.1, -0.2];
            let y = conv1d_forward(&x, &w, &b, 3, pad).unwrap();
            let o = conv_oracle(&x, &w, &b, 3, left);
            for (a, e) in y.as_slice().iter().zip(o.as_slice()) {
                assert_relative_eq!(a, e, epsilon = 1e-12);
            }
        }
        // F=2, T=4, k=2 causal
        let x = rand_matrix(&mut rng, 4, 2);
        let w: Vec<f64> = (0..2 * 2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv1d_forward(&x, &w, &[0.0, 0.05], 2, Padding::Causal).unwrap();
        let o = conv_oracle(&x, &w, &[0.0, 0.05], 2, 1);
        for (a, e) in y.as_slice().iter().zip(o.as_slice()) {
            assert_relative_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = Matrix::zeros(4, 3);
        assert!(conv1d_forward(&x, &[0.0; 5], &[0.0], 3, Padding::Same).is_err());
        assert!(conv1d_forward(&x, &[0.0; 6], &[0.0], 2, Padding::Same).is_err());
    }

    #[test]
    fn pool_by_hand() {
        let x = Matrix::from_rows(&[[1.0], [3.0], [2.0], [0.0]]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().as_slice(), &[3.0, 2.0]);
        let x5 = Matrix::from_rows(&[[1.0], [3.0], [2.0], [0.0], [4.0]]).unwrap();
        assert_eq!(maxpool2(&x5).unwrap().as_slice(), &[3.0, 2.0, 4.0]);
        assert!(maxpool2(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn pool_matches_window_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_matrix(&mut rng, 8, 3);
        let y = maxpool2(&x).unwrap();
        for j in 0..4 {
            for c in 0..3 {
                let e = [x.get(2 * j, c), x.get(2 * j + 1, c)]
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.get(j, c), e);
            }
        }
    }

    #[test]
    fn upsample_repeats() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(upsample2(&x).as_slice(), &[1.0, 1.0, 2.0, 2.0]);
        let one = Matrix::from_rows(&[[7.0, 8.0]]).unwrap();
        assert_eq!(upsample2(&one).rows(), 2);
        let delayed = upsample2_to(&x, 4, true);
        assert_eq!(delayed.as_slice(), &[0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn pool_then_upsample_constant_is_identity() {
        let x = Matrix::filled(6, 2, 0.75);
        assert_eq!(upsample2(&maxpool2(&x).unwrap()), x);
    }

    #[test]
    fn length_algebra() {
        for t in 1..20 {
            let x = Matrix::zeros(t, 1);
            assert_eq!(maxpool2_cached(&x).0.rows(), t.div_ceil(2));
            assert_eq!(upsample2(&x).rows(), 2 * t);
        }
    }

    #[test]
    fn normalize_by_hand() {
        let y = channel_max_normalize(&[2.0, 4.0]);
        assert_relative_eq!(y[0], 2.0 / (4.0 + 1e-5), epsilon = 1e-15);
        assert_relative_eq!(y[1], 4.0 / (4.0 + 1e-5), epsilon = 1e-15);
        assert_relative_eq!(y[0], 0.4999987, epsilon = 1e-7);
        assert_relative_eq!(y[1], 0.9999975, epsilon = 1e-7);
        assert_eq!(channel_max_normalize(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_keeps_argmax_below_one() {
        let e = [0.3, 5.0, 1.2];
        let y = channel_max_normalize(&e);
        assert_eq!(crate::matrix::argmax(&y), 1);
        assert!(y[1] < 1.0);
        assert_relative_eq!(y[1], 5.0 / (5.0 + NORM_EPS));
    }

    #[test]
    fn softmax_cases() {
        let x = Matrix::zeros(3, 4);
        let p = softmax_dense(&x, &[0.0; 12], &[0.0; 3]).unwrap();
        for t in 0..3 {
            for &v in p.row(t) {
                assert_relative_eq!(v, 1.0 / 3.0);
            }
        }
        let x = Matrix::from_rows(&[[0.0, 3f64.ln()]]).unwrap();
        let p = softmax_dense(&x, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(p.row(0)[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(p.row(0)[1], 0.75, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_matrix(&mut rng, 10, 4);
        let w: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = softmax_dense(&x, &w, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        for t in 0..10 {
            assert!((p.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let onehot = ProbSeries::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let gt = StateSequence::from_labels(vec![0, 1]);
        assert_eq!(cross_entropy_loss(&onehot, &gt).unwrap(), 0.0);

        let uni = ProbSeries::new(Matrix::filled(5, 4, 0.25)).unwrap();
        let gt = StateSequence::from_labels(vec![0, 1, 2, 3, 0]);
        assert_relative_eq!(cross_entropy_loss(&uni, &gt).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(4f64.ln(), 1.3863, epsilon = 1e-4);

        // direct summation oracle
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = rand_matrix(&mut rng, 7, 3);
        let p = softmax_rows(&logits);
        let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
        let mut acc = 0.0;
        for t in 0..7 {
            acc += -(p.get(t, labels[t])).ln();
        }
        assert_relative_eq!(cross_entropy(&p, &labels).unwrap(), acc / 7.0, epsilon = 1e-12);

        assert!(cross_entropy(&p, &labels[..3]).is_err());
    }

    #[test]
    fn dense_softmax_gradient_is_p_minus_onehot() {
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let w = [0.1, 0.2, -0.3, 0.0, 0.4, 0.1];
        let b = [0.05, -0.05];
        let logits = dense_logits(&x, &w, &b).unwrap();
        let p = softmax_rows(&logits);
        let g = softmax_ce_grad(&p, &[1]);
        let mut dw = [0.0; 6];
        let mut db = [0.0; 2];
        dense_backward(&x, &g, &w, &mut dw, &mut db);
        let onehot = [0.0, 1.0];
        for j in 0..2 {
            assert_relative_eq!(db[j], p.get(0, j) - onehot[j], epsilon = 1e-15);
            for c in 0..3 {
                assert_relative_eq!(dw[j * 3 + c], (p.get(0, j) - onehot[j]) * x.get(0, c), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn ce_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = softmax_rows(&rand_matrix(&mut rng, 5, 3));
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            assert!(cross_entropy(&p, &labels).unwrap() > 0.0);
        }
    }
}
