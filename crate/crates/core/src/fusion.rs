//! Weighted voting across models. Each model's weight for a state is its
//! diagnostic odds ratio on that state (`TP*TN / (FP*FN + eps)`) normalized
//! over models; the fused score of state `j` is `sum_i alpha[i][j] * Y_i[j]`.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{ProbSeries, StateSequence};
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};
use crate::nn::{Checkpoint, Tensor};

pub const ODDS_EPS: f64 = 1e-5;
pub const CHECKPOINT_KIND: &str = "fusion";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn odds_ratio(&self) -> f64 {
        (self.tp as f64 * self.tn as f64) / (self.fp as f64 * self.fn_ as f64 + ODDS_EPS)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// One-vs-rest counts per (model, state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_states: usize,
    pub per_model: Vec<Vec<Counts>>,
}

impl ConfusionCounts {
    pub fn get(&self, model: usize, state: usize) -> Counts {
        self.per_model[model][state]
    }

    /// Adds counts of another split with the same layout.
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.n_states != self.n_states || other.per_model.len() != self.per_model.len() {
            return Err(Error::shape("confusion count layouts differ"));
        }
        for (a, b) in self.per_model.iter_mut().zip(&other.per_model) {
            for (x, y) in a.iter_mut().zip(b) {
                x.tp += y.tp;
                x.tn += y.tn;
                x.fp += y.fp;
                x.fn_ += y.fn_;
            }
        }
        Ok(())
    }
}

pub fn confusion_counts(preds: &[&ProbSeries], gt: &StateSequence) -> Result<ConfusionCounts> {
    let n_states = preds
        .first()
        .map(|p| p.n_states())
        .ok_or_else(|| Error::invalid("no model predictions given"))?;
    let mut per_model = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        if p.len() != gt.len() {
            return Err(Error::shape(format!(
                "model {i} has {} frames, ground truth {}",
                p.len(),
                gt.len()
            )));
        }
        if p.n_states() != n_states {
            return Err(Error::shape(format!("model {i} scores {} states, expected {n_states}", p.n_states())));
        }
        let mut counts = vec![Counts::default(); n_states];
        for (t, &truth) in gt.labels().iter().enumerate() {
            if truth >= n_states {
                return Err(Error::invalid(format!("label {truth} outside {n_states} states")));
            }
            let guess = argmax(p.row(t));
            for (j, c) in counts.iter_mut().enumerate() {
                match (guess == j, truth == j) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
        per_model.push(counts);
    }
    Ok(ConfusionCounts { n_states, per_model })
}

/// `alpha[i][j]`, models by states; every column sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub alpha: Matrix,
}

impl WeightMatrix {
    pub fn n_models(&self) -> usize {
        self.alpha.rows()
    }

    pub fn n_states(&self) -> usize {
        self.alpha.cols()
    }

    /// Weight 1 for `model` on every state, 0 for the rest.
    pub fn single(n_models: usize, n_states: usize, model: usize) -> Self {
        let mut alpha = Matrix::zeros(n_models, n_states);
        alpha.row_mut(model).fill(1.0);
        WeightMatrix { alpha }
    }

    pub fn write_csv<W: Write>(&self, mut w: W, model_names: &[String]) -> std::io::Result<()> {
        write!(w, "model")?;
        for j in 0..self.n_states() {
            write!(w, ",s{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_models() {
            let name = model_names.get(i).cloned().unwrap_or_else(|| format!("model{i}"));
            write!(w, "{name}")?;
            for v in self.alpha.row(i) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, model_names: &[String]) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w, model_names).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn odds_ratio_weights(counts: &ConfusionCounts) -> Result<WeightMatrix> {
    let a = counts.per_model.len();
    if a == 0 {
        return Err(Error::invalid("no models to weight"));
    }
    let b = counts.n_states;
    let mut alpha = Matrix::zeros(a, b);
    for j in 0..b {
        let raw: Vec<f64> = (0..a).map(|i| counts.get(i, j).odds_ratio()).collect();
        let sum: f64 = raw.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for (i, r) in raw.iter().enumerate() {
                alpha.set(i, j, r / sum);
            }
        } else {
            warn!("every model has zero odds ratio on state {j}; using uniform weights");
            for i in 0..a {
                alpha.set(i, j, 1.0 / a as f64);
            }
        }
    }
    Ok(WeightMatrix { alpha })
}

/// Fused per-frame scores. Rows are not renormalized.
pub fn fuse(preds: &[&ProbSeries], weights: &WeightMatrix) -> Result<Matrix> {
    let mats: Vec<&Matrix> = preds.iter().map(|p| p.matrix()).collect();
    fuse_scores(&mats, weights)
}

/// [`fuse`] over arbitrary nonnegative score matrices.
pub fn fuse_scores(preds: &[&Matrix], weights: &WeightMatrix) -> Result<Matrix> {
    if preds.len() != weights.n_models() {
        return Err(Error::shape(format!(
            "{} prediction series for {} weight rows",
            preds.len(),
            weights.n_models()
        )));
    }
    let t_len = preds.first().map(|p| p.rows()).unwrap_or(0);
    let b = weights.n_states();
    for (i, p) in preds.iter().enumerate() {
        if p.cols() != b {
            return Err(Error::shape(format!("model {i} scores {} states, weights cover {b}", p.cols())));
        }
        if p.rows() != t_len {
            return Err(Error::shape("prediction series lengths differ"));
        }
    }
    let mut out = Matrix::zeros(t_len, b);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for (i, p) in preds.iter().enumerate() {
            let a = weights.alpha.row(i);
            for ((o, w), y) in row.iter_mut().zip(a).zip(p.row(t)) {
                *o += w * y;
            }
        }
    }
    Ok(out)
}

/// Frame-wise argmax, ties to the lowest state index.
pub fn decide(scores: &Matrix) -> StateSequence {
    StateSequence::from_labels(scores.iter_rows().map(argmax).collect())
}

/// A named set of component models with their fusion weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub members: Vec<String>,
    pub weights: WeightMatrix,
}

#[derive(Serialize, Deserialize)]
struct FusionHeader {
    members: Vec<String>,
    n_states: usize,
}

impl FusionModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let h = FusionHeader {
            members: self.members.clone(),
            n_states: self.weights.n_states(),
        };
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_string(&h).expect("header serializes"),
            vec![Tensor {
                name: "alpha".into(),
                shape: vec![self.weights.n_models(), self.weights.n_states()],
                data: self.weights.alpha.as_slice().to_vec(),
            }],
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("expected a fusion checkpoint, found {}", ck.kind)));
        }
        let h: FusionHeader = serde_json::from_str(&ck.config)
            .map_err(|e| Error::config(format!("bad fusion header: {e}")))?;
        let t = ck
            .tensor("alpha")
            .ok_or_else(|| Error::config("fusion checkpoint lacks alpha"))?;
        let alpha = Matrix::from_vec(h.members.len(), h.n_states, t.data.clone())?;
        Ok(FusionModel {
            members: h.members,
            weights: WeightMatrix { alpha },
        })
    }
}
