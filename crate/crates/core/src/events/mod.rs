//! Frame-wise state classifier over binary event channels: an ensemble of
//! three classifiers picked by repeated bootstrap fits scored with ROC AUC.

pub mod auc;
pub mod forest;
pub mod linear;
pub mod patterns;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{FeatureSequence, ProbSeries};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Checkpoint, Tensor};
use crate::seed;

pub use auc::roc_auc_ovr;
pub use forest::Forest;
pub use linear::LinearModel;
pub use patterns::PatternSet;

pub const CHECKPOINT_KIND: &str = "events";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateSpec {
    RandomForest { n_trees: usize, min_samples_split: usize },
    LinearSvm { c: f64 },
    Ridge { alpha: f64 },
}

impl CandidateSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CandidateSpec::RandomForest { n_trees, min_samples_split } => {
                if n_trees == 0 || min_samples_split < 2 {
                    return Err(Error::config("random forest needs n_trees >= 1 and min_samples_split >= 2"));
                }
            }
            CandidateSpec::LinearSvm { c } => {
                if !(c >= 0.0 && c.is_finite()) {
                    return Err(Error::config("SVM C must be >= 0"));
                }
            }
            CandidateSpec::Ridge { alpha } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::config("ridge alpha must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn fit(&self, data: &PatternSet, rng: &mut seed::Rng) -> Result<FittedClassifier> {
        self.validate()?;
        Ok(match *self {
            CandidateSpec::RandomForest { n_trees, min_samples_split } => {
                FittedClassifier::Forest(forest::fit_forest(data, n_trees, min_samples_split, rng))
            }
            CandidateSpec::LinearSvm { c } => {
                FittedClassifier::Linear(linear::fit_linear_svm(data, c, linear::SVM_ITERATIONS)?)
            }
            CandidateSpec::Ridge { alpha } => FittedClassifier::Linear(linear::fit_ridge(data, alpha)?),
        })
    }
}

/// Twelve candidates: forests of 100/400/500 trees with min split 2 or 3,
/// SVMs with C in {0.5, 1, 2}, ridge with alpha in {0.1, 1, 10}.
pub fn default_grid() -> Vec<CandidateSpec> {
    let mut g = Vec::new();
    for n_trees in [100, 400, 500] {
        for min_samples_split in [2, 3] {
            g.push(CandidateSpec::RandomForest { n_trees, min_samples_split });
        }
    }
    for c in [0.5, 1.0, 2.0] {
        g.push(CandidateSpec::LinearSvm { c });
    }
    for alpha in [0.1, 1.0, 10.0] {
        g.push(CandidateSpec::Ridge { alpha });
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub enum FittedClassifier {
    Forest(Forest),
    Linear(LinearModel),
}

impl FittedClassifier {
    pub fn predict_bits(&self, bits: u64) -> Vec<f64> {
        match self {
            FittedClassifier::Forest(f) => f.predict_bits(bits),
            FittedClassifier::Linear(m) => m.predict_bits(bits),
        }
    }

    /// Per-frame probabilities, evaluated once per distinct pattern.
    pub fn predict_matrix(&self, x: &Matrix, n_states: usize) -> Result<Matrix> {
        predict_cached(x, n_states, |bits| self.predict_bits(bits))
    }
}

fn predict_cached(x: &Matrix, n_states: usize, f: impl Fn(u64) -> Vec<f64>) -> Result<Matrix> {
    let mut cache = std::collections::HashMap::new();
    let mut out = Matrix::zeros(x.rows(), n_states);
    for t in 0..x.rows() {
        let bits = patterns::encode(x.row(t))?;
        let p = cache.entry(bits).or_insert_with(|| f(bits));
        out.row_mut(t).copy_from_slice(p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub n_features: usize,
    pub n_states: usize,
    pub specs: Vec<CandidateSpec>,
    pub members: Vec<FittedClassifier>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    n_features: usize,
    n_states: usize,
    members: Vec<CandidateSpec>,
}

impl EnsembleModel {
    /// Mean of member probability vectors for one frame.
    pub fn predict(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.n_features {
            return Err(Error::shape(format!(
                "frame has {} channels, ensemble expects {}",
                frame.len(),
                self.n_features
            )));
        }
        Ok(self.predict_bits(patterns::encode(frame)?))
    }

    fn predict_bits(&self, bits: u64) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_states];
        for m in &self.members {
            for (a, p) in acc.iter_mut().zip(m.predict_bits(bits)) {
                *a += p;
            }
        }
        let n = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict_series(&self, x: &FeatureSequence) -> Result<ProbSeries> {
        if x.n_features() != self.n_features {
            return Err(Error::shape(format!(
                "stream has {} channels, ensemble expects {}",
                x.n_features(),
                self.n_features
            )));
        }
        ProbSeries::new(predict_cached(x.data(), self.n_states, |b| self.predict_bits(b))?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = EnsembleHeader {
            n_features: self.n_features,
            n_states: self.n_states,
            members: self.specs.clone(),
        };
        let mut tensors = Vec::new();
        for (m, member) in self.members.iter().enumerate() {
            match member {
                FittedClassifier::Forest(f) => {
                    for (t, tree) in f.trees.iter().enumerate() {
                        let data = tree
                            .nodes
                            .iter()
                            .flat_map(|n| {
                                [
                                    n.feature.map_or(-1.0, |f| f as f64),
                                    n.left as f64,
                                    n.right as f64,
                                    n.class as f64,
                                ]
                            })
                            .collect();
                        tensors.push(Tensor {
                            name: format!("m{m}.tree{t}"),
                            shape: vec![tree.nodes.len(), 4],
                            data,
                        });
                    }
                }
                FittedClassifier::Linear(l) => tensors.push(Tensor {
                    name: format!("m{m}.w"),
                    shape: vec![l.n_states, l.n_features + 1],
                    data: l.weights.clone(),
                }),
            }
        }
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::to_string(&header).expect("header serializes"),
            tensors,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::config(format!("expected an events checkpoint, found {}", ck.kind)));
        }
        let h: EnsembleHeader = serde_json::from_str(&ck.config)
            .map_err(|e| Error::config(format!("bad events header in checkpoint: {e}")))?;
        let mut members = Vec::new();
        for (m, spec) in h.members.iter().enumerate() {
            let member = match spec {
                CandidateSpec::RandomForest { n_trees, .. } => {
                    let mut trees = Vec::with_capacity(*n_trees);
                    for t in 0..*n_trees {
                        let name = format!("m{m}.tree{t}");
                        let tensor = ck
                            .tensor(&name)
                            .ok_or_else(|| Error::config(format!("checkpoint lacks {name}")))?;
                        let nodes = tensor
                            .data
                            .chunks_exact(4)
                            .map(|c| forest::Node {
                                feature: (c[0] >= 0.0).then_some(c[0] as usize),
                                left: c[1] as usize,
                                right: c[2] as usize,
                                class: c[3] as usize,
                            })
                            .collect::<Vec<_>>();
                        let bad = nodes.iter().any(|n| {
                            n.class >= h.n_states
                                || n.feature.is_some_and(|f| {
                                    f >= h.n_features || n.left >= nodes.len() || n.right >= nodes.len()
                                })
                        });
                        if nodes.is_empty() || bad {
                            return Err(Error::config(format!("malformed tree {name}")));
                        }
                        trees.push(forest::Tree { nodes });
                    }
                    FittedClassifier::Forest(Forest { n_states: h.n_states, trees })
                }
                _ => {
                    let name = format!("m{m}.w");
                    let tensor = ck
                        .tensor(&name)
                        .ok_or_else(|| Error::config(format!("checkpoint lacks {name}")))?;
                    if tensor.data.len() != h.n_states * (h.n_features + 1) {
                        return Err(Error::config(format!("tensor {name} has the wrong size")));
                    }
                    FittedClassifier::Linear(LinearModel {
                        n_features: h.n_features,
                        n_states: h.n_states,
                        weights: tensor.data.clone(),
                    })
                }
            };
            members.push(member);
        }
        Ok(EnsembleModel {
            n_features: h.n_features,
            n_states: h.n_states,
            specs: h.members,
            members,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionOptions {
    pub max_iters: usize,
    pub early_stop: f64,
    pub n_members: usize,
    pub seed: u64,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            max_iters: 200,
            early_stop: 1e-6,
            n_members: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SelectionReport {
    pub iterations: usize,
    /// How often each grid entry was the iteration winner.
    pub counts: Vec<usize>,
    /// Winning grid index and its validation AUC, per iteration.
    pub winners: Vec<(usize, f64)>,
    pub chosen: Vec<usize>,
}

/// Grid indices ordered by selection count (ties to the lower index), cycled
/// until `n` slots are filled.
pub fn top_by_frequency(counts: &[usize], n: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    if ranked.is_empty() {
        return Vec::new();
    }
    (0..n).map(|i| ranked[i % ranked.len()]).collect()
}

/// Repeated bootstrap selection followed by a refit of the most frequent
/// winners on the full training set.
pub fn select_ensemble(
    grid: &[CandidateSpec],
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    n_states: usize,
    opts: &SelectionOptions,
) -> Result<(EnsembleModel, SelectionReport)> {
    if grid.is_empty() {
        return Err(Error::config("empty candidate grid"));
    }
    for c in grid {
        c.validate()?;
    }
    if train_x.cols() != val_x.cols() {
        return Err(Error::shape("train and validation channel counts differ"));
    }
    let train = PatternSet::from_frames(train_x, train_y, n_states)?;
    let mut boot_rng = seed::stream(opts.seed, "events/bootstrap");
    let mut report = SelectionReport {
        counts: vec![0; grid.len()],
        ..Default::default()
    };
    let mut running_best = f64::NEG_INFINITY;
    for iter in 0..opts.max_iters.max(1) {
        let sample = train.bootstrap(&mut boot_rng);
        let scores: Vec<f64> = grid
            .par_iter()
            .enumerate()
            .map(|(ci, spec)| {
                let mut rng = seed::stream(opts.seed, &format!("events/fit/{iter}/{ci}"));
                match spec.fit(&sample, &mut rng) {
                    Ok(model) => model
                        .predict_matrix(val_x, n_states)
                        .and_then(|p| roc_auc_ovr(&p, val_y))
                        .unwrap_or(f64::NEG_INFINITY),
                    Err(_) => f64::NEG_INFINITY,
                }
            })
            .collect();
        let (winner, score) = scores
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bs), (i, s)| if s > bs { (i, s) } else { (bi, bs) });
        if score == f64::NEG_INFINITY {
            warn!("selection iteration {iter}: no candidate could be scored");
            continue;
        }
        report.counts[winner] += 1;
        report.winners.push((winner, score));
        report.iterations = iter + 1;
        let improvement = score.max(running_best) - running_best;
        running_best = running_best.max(score);
        debug!("selection iteration {iter}: candidate {winner} auc {score:.6}");
        if improvement < opts.early_stop {
            break;
        }
    }
    if report.winners.is_empty() {
        return Err(Error::invalid(
            "no candidate could be fitted and scored; check that train and validation sets hold >= 2 classes",
        ));
    }
    report.chosen = top_by_frequency(&report.counts, opts.n_members.max(1));
    let members = report
        .chosen
        .iter()
        .enumerate()
        .map(|(slot, &ci)| {
            let mut rng = seed::stream(opts.seed, &format!("events/refit/{slot}"));
            grid[ci].fit(&train, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "event ensemble after {} iterations: {:?}",
        report.iterations,
        report.chosen.iter().map(|&i| grid[i]).collect::<Vec<_>>()
    );
    Ok((
        EnsembleModel {
            n_features: train_x.cols(),
            n_states,
            specs: report.chosen.iter().map(|&i| grid[i]).collect(),
            members,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::argmax;

    /// Each of four states owns a distinct 3-channel pattern.
    fn lookup_data(reps: usize) -> (Matrix, Vec<usize>) {
        let pats = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..reps {
            for (j, p) in pats.iter().enumerate() {
                rows.push(*p);
                labels.push(j);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn forest_separates_lookup_patterns() {
        let (x, y) = lookup_data(5);
        let d = PatternSet::from_frames(&x, &y, 4).unwrap();
        let mut rng = seed::stream(0, "rf");
        let m = CandidateSpec::RandomForest { n_trees: 20, min_samples_split: 2 }
            .fit(&d, &mut rng)
            .unwrap();
        let p = m.predict_matrix(&x, 4).unwrap();
        for t in 0..x.rows() {
            assert_eq!(argmax(p.row(t)), y[t]);
        }
    }

    #[test]
    fn one_candidate_grid_and_early_stop() {
        let (x, y) = lookup_data(5);
        let grid = [CandidateSpec::RandomForest { n_trees: 5, min_samples_split: 2 }];
        let (ens, rep) = select_ensemble(&grid, &x, &y, &x, &y, 4, &SelectionOptions::default()).unwrap();
        assert_eq!(ens.members.len(), 3);
        assert!(ens.specs.iter().all(|s| *s == grid[0]));
        // perfect from the start: the second iteration brings no improvement
        assert_eq!(rep.iterations, 2);
        assert!(select_ensemble(&[], &x, &y, &x, &y, 4, &SelectionOptions::default()).is_err());
    }

    #[test]
    fn forest_wins_on_xor() {
        // class = a XOR b over two channels, plus one irrelevant channel
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..64 {
            let (a, b, c) = (i & 1, (i >> 1) & 1, (i >> 2) & 1);
            rows.push([a as f64, b as f64, c as f64]);
            y.push(a ^ b);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let grid = [
            CandidateSpec::LinearSvm { c: 1.0 },
            CandidateSpec::Ridge { alpha: 1.0 },
            CandidateSpec::RandomForest { n_trees: 30, min_samples_split: 2 },
            CandidateSpec::RandomForest { n_trees: 10, min_samples_split: 2 },
        ];
        let opts = SelectionOptions { max_iters: 10, early_stop: -1.0, ..Default::default() };
        let (ens, _) = select_ensemble(&grid, &x, &y, &x, &y, 2, &opts).unwrap();
        assert!(ens.specs.iter().all(|s| matches!(s, CandidateSpec::RandomForest { .. })));
    }

    #[test]
    fn mean_of_members() {
        let onehot = |j: usize| {
            let mut w = vec![0.0; 3 * 2];
            w[j * 2 + 1] = 1e6; // intercept only
            FittedClassifier::Linear(LinearModel { n_features: 1, n_states: 3, weights: w })
        };
        let ens = EnsembleModel {
            n_features: 1,
            n_states: 3,
            specs: vec![CandidateSpec::Ridge { alpha: 1.0 }; 3],
            members: vec![onehot(0), onehot(0), onehot(1)],
        };
        let p = ens.predict(&[1.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn top_by_frequency_cycles() {
        assert_eq!(top_by_frequency(&[0, 5, 2, 5], 3), vec![1, 3, 2]);
        assert_eq!(top_by_frequency(&[0, 4, 0], 3), vec![1, 1, 1]);
        assert_eq!(top_by_frequency(&[1, 4], 3), vec![1, 0, 1]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (x, y) = lookup_data(3);
        let grid = default_grid();
        let opts = SelectionOptions { max_iters: 3, ..Default::default() };
        let (ens, _) = select_ensemble(&grid, &x, &y, &x, &y, 4, &opts).unwrap();
        let back = EnsembleModel::from_checkpoint(&ens.to_checkpoint()).unwrap();
        assert_eq!(back, ens);
        assert_eq!(grid.len(), 12);
    }
}
