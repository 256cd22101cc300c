//! Linear event classifiers: Crammer–Singer multiclass SVM (subgradient
//! descent) and one-vs-all ridge regression. Both report probabilities as a
//! softmax over their per-class decision values.

use nalgebra::{DMatrix, DVector};

use super::patterns::{bit, PatternSet};
use crate::error::{Error, Result};
use crate::nn::ops::softmax_in_place;

/// `scores = W [x; 1]` with `W` stored row-major as `n_states x (n_features + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub n_features: usize,
    pub n_states: usize,
    pub weights: Vec<f64>,
}

impl LinearModel {
    fn zeros(n_features: usize, n_states: usize) -> Self {
        LinearModel {
            n_features,
            n_states,
            weights: vec![0.0; n_states * (n_features + 1)],
        }
    }

    pub fn scores_bits(&self, bits: u64) -> Vec<f64> {
        let stride = self.n_features + 1;
        (0..self.n_states)
            .map(|j| {
                let row = &self.weights[j * stride..(j + 1) * stride];
                let mut s = row[self.n_features];
                for (c, w) in row[..self.n_features].iter().enumerate() {
                    if bit(bits, c) {
                        s += w;
                    }
                }
                s
            })
            .collect()
    }

    pub fn predict_bits(&self, bits: u64) -> Vec<f64> {
        let mut s = self.scores_bits(bits);
        softmax_in_place(&mut s);
        s
    }
}

fn augmented(bits: u64, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|c| if bit(bits, c) { 1.0 } else { 0.0 }).collect();
    x.push(1.0);
    x
}

/// Mean Crammer–Singer hinge loss `max(0, 1 + max_{r != y} s_r - s_y)`.
pub fn hinge_loss(model: &LinearModel, data: &PatternSet) -> f64 {
    let mut total = 0.0;
    for c in &data.cells {
        total += c.weight * cs_violation(&model.scores_bits(c.bits), c.label).0;
    }
    total / data.total_weight()
}

fn cs_violation(scores: &[f64], y: usize) -> (f64, usize) {
    let mut rival = usize::MAX;
    let mut best = f64::NEG_INFINITY;
    for (r, &s) in scores.iter().enumerate() {
        if r != y && s > best {
            best = s;
            rival = r;
        }
    }
    ((1.0 + best - scores[y]).max(0.0), rival)
}

pub const SVM_ITERATIONS: usize = 400;

/// Minimizes `0.5 |W|^2 + C * sum_i hinge_i` by projected subgradient descent
/// (step `1 / (lambda t)` on the per-frame-averaged objective). Returns the
/// iterate with the lowest objective.
pub fn fit_linear_svm(data: &PatternSet, c: f64, iterations: usize) -> Result<LinearModel> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::config(format!("SVM C must be >= 0, got {c}")));
    }
    if data.n_classes_present() < 2 {
        return Err(Error::invalid("linear SVM needs at least two classes"));
    }
    let n = data.n_features;
    let b = data.n_states;
    let stride = n + 1;
    let mut model = LinearModel::zeros(n, b);
    if c == 0.0 {
        return Ok(model);
    }
    let total = data.total_weight();
    let lambda = 1.0 / (c * total);
    let radius = 1.0 / lambda.sqrt();
    let xs: Vec<Vec<f64>> = data.cells.iter().map(|cell| augmented(cell.bits, n)).collect();
    let objective = |m: &LinearModel| {
        0.5 * lambda * m.weights.iter().map(|w| w * w).sum::<f64>() + hinge_loss(m, data)
    };
    let mut best = (objective(&model), model.clone());
    let mut grad = vec![0.0; model.weights.len()];
    for t in 1..=iterations {
        for (g, w) in grad.iter_mut().zip(&model.weights) {
            *g = lambda * w;
        }
        for (cell, x) in data.cells.iter().zip(&xs) {
            let (v, rival) = cs_violation(&model.scores_bits(cell.bits), cell.label);
            if v > 0.0 {
                let s = cell.weight / total;
                for k in 0..stride {
                    grad[rival * stride + k] += s * x[k];
                    grad[cell.label * stride + k] -= s * x[k];
                }
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= eta * g;
        }
        let norm = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > radius {
            let s = radius / norm;
            model.weights.iter_mut().for_each(|w| *w *= s);
        }
        let obj = objective(&model);
        if obj < best.0 {
            best = (obj, model.clone());
        }
    }
    Ok(best.1)
}

/// One-vs-all ridge regression on `{-1, +1}` targets with an unpenalized
/// intercept: `W = (Xc' D Xc + alpha I)^-1 Xc' D Yc` on weight-centered data.
pub fn fit_ridge(data: &PatternSet, alpha: f64) -> Result<LinearModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    if data.n_classes_present() < 2 {
        return Err(Error::invalid("ridge classifier needs at least two classes"));
    }
    let n = data.n_features;
    let b = data.n_states;
    let total = data.total_weight();
    let m = data.cells.len();
    let x = DMatrix::from_fn(m, n, |i, c| if bit(data.cells[i].bits, c) { 1.0 } else { 0.0 });
    let y = DMatrix::from_fn(m, b, |i, j| if data.cells[i].label == j { 1.0 } else { -1.0 });
    let w = DVector::from_iterator(m, data.cells.iter().map(|c| c.weight));
    let x_mean = x.tr_mul(&w) / total;
    let y_mean = y.tr_mul(&w) / total;
    let mut xc = x.clone();
    let mut yc = y.clone();
    for i in 0..m {
        for c in 0..n {
            xc[(i, c)] -= x_mean[c];
        }
        for j in 0..b {
            yc[(i, j)] -= y_mean[j];
        }
    }
    let mut xw = xc.clone();
    for i in 0..m {
        xw.row_mut(i).scale_mut(w[i]);
    }
    let gram = xc.tr_mul(&xw) + DMatrix::identity(n, n) * alpha;
    let rhs = xw.tr_mul(&yc);
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numeric(format!("ridge solve failed: {e}")))?,
    };
    let mut model = LinearModel::zeros(n, b);
    let stride = n + 1;
    for j in 0..b {
        let mut icpt = y_mean[j];
        for c in 0..n {
            model.weights[j * stride + c] = coef[(c, j)];
            icpt -= x_mean[c] * coef[(c, j)];
        }
        model.weights[j * stride + n] = icpt;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{argmax, Matrix};

    fn set(rows: &[Vec<f64>], labels: &[usize], b: usize) -> PatternSet {
        PatternSet::from_frames(&Matrix::from_rows(rows).unwrap(), labels, b).unwrap()
    }

    #[test]
    fn separable_two_class_hinge_vanishes() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let d = set(&rows, &[1, 1, 0, 0], 2);
        let m = fit_linear_svm(&d, 100.0, 2000).unwrap();
        assert!(hinge_loss(&m, &d) < 1e-2, "{}", hinge_loss(&m, &d));
    }

    #[test]
    fn zero_c_gives_uniform() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = set(&rows, &[0, 1], 2);
        let m = fit_linear_svm(&d, 0.0, 10).unwrap();
        assert_eq!(m.predict_bits(1), vec![0.5, 0.5]);
        assert!(fit_linear_svm(&set(&rows, &[1, 1], 2), 1.0, 10).is_err());
    }

    #[test]
    fn one_hot_channels_map_to_identity() {
        let rows: Vec<Vec<f64>> = (0..3)
            .flat_map(|j| std::iter::repeat_n((0..3).map(|c| (c == j) as u8 as f64).collect(), 4))
            .collect();
        let labels: Vec<usize> = (0..3).flat_map(|j| [j; 4]).collect();
        let d = set(&rows, &labels, 3);
        for m in [fit_linear_svm(&d, 2.0, SVM_ITERATIONS).unwrap(), fit_ridge(&d, 1.0).unwrap()] {
            for j in 0..3 {
                let p = m.predict_bits(1 << j);
                assert_eq!(argmax(&p), j);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ridge_matches_normal_equations_on_tiny_case() {
        // one channel, labels equal to the channel: closed form by hand.
        // x = [0,0,1,1], y(class1) = [-1,-1,1,1]; centered x = +-0.5, centered y = +-1
        // coef = sum(xc*yc) / (sum(xc^2) + alpha) = 2 / (1 + alpha)
        let rows = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        let d = set(&rows, &[0, 0, 1, 1], 2);
        let m = fit_ridge(&d, 1.0).unwrap();
        assert!((m.weights[2] - 1.0).abs() < 1e-12);
        assert!((m.weights[3] - (-0.5)).abs() < 1e-12);
        assert!((m.weights[0] + 1.0).abs() < 1e-12);
    }
}
