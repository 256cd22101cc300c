//! Binary event frames compressed to weighted unique `(pattern, label)` cells.
//!
//! Six binary channels admit at most 64 patterns, so every fit below works on
//! a handful of weighted cells instead of tens of thousands of frames.

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::Rng;

pub const MAX_CHANNELS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub bits: u64,
    pub label: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternSet {
    pub n_features: usize,
    pub n_states: usize,
    pub cells: Vec<Cell>,
}

/// Packs a binary frame into a bit mask (channel `c` is bit `c`).
pub fn encode(frame: &[f64]) -> Result<u64> {
    if frame.len() > MAX_CHANNELS {
        return Err(Error::invalid(format!(
            "at most {MAX_CHANNELS} event channels supported, got {}",
            frame.len()
        )));
    }
    let mut bits = 0u64;
    for (c, &v) in frame.iter().enumerate() {
        if v == 1.0 {
            bits |= 1 << c;
        } else if v != 0.0 {
            return Err(Error::invalid(format!("event channel {c} holds non-binary value {v}")));
        }
    }
    Ok(bits)
}

pub fn bit(bits: u64, c: usize) -> bool {
    bits >> c & 1 == 1
}

impl PatternSet {
    pub fn from_frames(x: &Matrix, labels: &[usize], n_states: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} frames vs {} labels",
                x.rows(),
                labels.len()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        let mut counts: BTreeMap<(u64, usize), f64> = BTreeMap::new();
        for (t, &l) in labels.iter().enumerate() {
            if l >= n_states {
                return Err(Error::invalid(format!("label {l} outside {n_states} states")));
            }
            *counts.entry((encode(x.row(t))?, l)).or_insert(0.0) += 1.0;
        }
        Ok(PatternSet {
            n_features: x.cols(),
            n_states,
            cells: counts
                .into_iter()
                .map(|((bits, label), weight)| Cell { bits, label, weight })
                .collect(),
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.cells.iter().map(|c| c.weight).sum()
    }

    pub fn class_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_states];
        for c in &self.cells {
            w[c.label] += c.weight;
        }
        w
    }

    pub fn n_classes_present(&self) -> usize {
        self.class_weights().iter().filter(|&&w| w > 0.0).count()
    }

    /// Bootstrap of the underlying frames: `n` draws with replacement, realized
    /// as a multinomial over cells via sequential binomials.
    pub fn bootstrap(&self, rng: &mut Rng) -> PatternSet {
        let n_total = self.total_weight().round() as u64;
        let mut remaining = n_total;
        let mut mass = self.total_weight();
        let mut cells = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            if remaining == 0 {
                break;
            }
            let p = (c.weight / mass).clamp(0.0, 1.0);
            let k = if p >= 1.0 {
                remaining
            } else {
                Binomial::new(remaining, p).expect("valid binomial").sample(rng)
            };
            mass -= c.weight;
            remaining -= k;
            if k > 0 {
                cells.push(Cell { weight: k as f64, ..*c });
            }
        }
        PatternSet {
            n_features: self.n_features,
            n_states: self.n_states,
            cells,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn dedup_counts() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = PatternSet::from_frames(&x, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(p.cells.len(), 3);
        assert_eq!(p.total_weight(), 4.0);
        assert_eq!(p.cells[0], Cell { bits: 1, label: 0, weight: 2.0 });
        assert!(PatternSet::from_frames(&Matrix::filled(1, 2, 0.5), &[0], 2).is_err());
    }

    #[test]
    fn bootstrap_preserves_total() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let p = PatternSet::from_frames(&x, &[0, 0, 1, 1], 2).unwrap();
        let mut rng = seed::stream(1, "boot");
        let mut seen = vec![0.0; 4];
        for _ in 0..2000 {
            let b = p.bootstrap(&mut rng);
            assert_eq!(b.total_weight(), 4.0);
            for c in &b.cells {
                seen[c.bits as usize] += c.weight;
            }
        }
        // each frame is drawn with probability 1/4
        for s in seen {
            assert!((s / 8000.0 - 0.25).abs() < 0.02, "{s}");
        }
    }
}
