//! One-vs-rest ROC AUC via the Mann–Whitney rank statistic.

use log::warn;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// AUC of `scores` for the binary split `positive[i]`, using midranks for ties.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro-averaged one-vs-rest AUC over the classes present in `labels`.
pub fn roc_auc_ovr(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::shape(format!(
            "{} score rows vs {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    let b = scores.cols();
    if let Some(&l) = labels.iter().find(|&&l| l >= b) {
        return Err(Error::invalid(format!("label {l} outside {b} score columns")));
    }
    let mut present = vec![false; b];
    for &l in labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("AUC needs at least two classes present"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut column = vec![0.0; labels.len()];
    for j in 0..b {
        if !present[j] {
            warn!("class {j} absent from labels; skipped in AUC");
            continue;
        }
        for (t, v) in column.iter_mut().enumerate() {
            *v = scores.get(t, j);
        }
        let pos: Vec<bool> = labels.iter().map(|&l| l == j).collect();
        sum += binary_auc(&column, &pos).expect("both sides nonempty");
        n += 1;
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case_is_perfect() {
        let a = binary_auc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(a, 1.0);
        let a = binary_auc(&[0.1, 0.2, 0.3, 0.4], &[true, true, false, false]).unwrap();
        assert_eq!(a, 0.0);
        // one tie across classes counts half
        let a = binary_auc(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn absent_class_skipped_and_single_class_rejected() {
        let s = Matrix::from_rows(&[[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]]).unwrap();
        assert_eq!(roc_auc_ovr(&s, &[0, 1]).unwrap(), 1.0);
        assert!(roc_auc_ovr(&s, &[0, 0]).is_err());
    }
}
