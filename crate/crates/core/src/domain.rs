//! Domain types shared by every model: vocabularies, feature streams, label
//! sequences, per-model probability series, segmentation and LOUO splits.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

/// Tolerance on row sums of a [`ProbSeries`].
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Ordered set of state names. Indices are dense, 0-based and stable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct StateVocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl StateVocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::invalid(format!(
                "a state vocabulary needs at least 2 states, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate state name {n:?}")));
            }
        }
        Ok(StateVocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl TryFrom<Vec<String>> for StateVocab {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        StateVocab::new(names)
    }
}

impl From<StateVocab> for Vec<String> {
    fn from(v: StateVocab) -> Self {
        v.names
    }
}

/// A `T x N` stream of feature vectors for one modality of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    data: Matrix,
    sample_rate_hz: f64,
}

impl FeatureSequence {
    pub fn new(data: Matrix, sample_rate_hz: f64) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if data.cols() == 0 {
            return Err(Error::invalid("feature sequence has zero features"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !data.all_finite() {
            return Err(Error::invalid("feature sequence contains non-finite values"));
        }
        Ok(FeatureSequence {
            data,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.data.cols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Frames `0..t`. Panics when `t` is zero or beyond the stream.
    pub fn prefix(&self, t: usize) -> FeatureSequence {
        assert!(t >= 1 && t <= self.len());
        FeatureSequence {
            data: self.data.slice_rows(0, t),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Per-frame state indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSequence {
    labels: Vec<usize>,
}

impl StateSequence {
    /// Checks every label against a vocabulary of `n_states`.
    pub fn new(labels: Vec<usize>, n_states: usize) -> Result<Self> {
        if let Some((t, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_states) {
            return Err(Error::invalid(format!(
                "label {l} at frame {t} is outside a vocabulary of {n_states} states"
            )));
        }
        Ok(StateSequence { labels })
    }

    pub fn from_labels(labels: Vec<usize>) -> Self {
        StateSequence { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// One synchronized trial: three modality streams plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialBundle {
    pub kinematics: FeatureSequence,
    pub vision: FeatureSequence,
    pub events: FeatureSequence,
    pub labels: StateSequence,
    pub user_id: String,
    pub trial_id: String,
}

impl TrialBundle {
    pub fn new(
        kinematics: FeatureSequence,
        vision: FeatureSequence,
        events: FeatureSequence,
        labels: StateSequence,
        user_id: impl Into<String>,
        trial_id: impl Into<String>,
    ) -> Result<Self> {
        let t = labels.len();
        for (name, s) in [("kinematics", &kinematics), ("vision", &vision), ("events", &events)] {
            if s.len() != t {
                return Err(Error::shape(format!(
                    "{name} stream has {} frames but labels have {t}",
                    s.len()
                )));
            }
            if s.sample_rate_hz() != kinematics.sample_rate_hz() {
                return Err(Error::shape(format!(
                    "{name} stream sample rate {} differs from kinematics {}",
                    s.sample_rate_hz(),
                    kinematics.sample_rate_hz()
                )));
            }
        }
        if let Some(v) = events
            .data()
            .as_slice()
            .iter()
            .find(|&&v| v != 0.0 && v != 1.0)
        {
            return Err(Error::invalid(format!("event stream value {v} is not binary")));
        }
        Ok(TrialBundle {
            kinematics,
            vision,
            events,
            labels,
            user_id: user_id.into(),
            trial_id: trial_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.kinematics.sample_rate_hz()
    }

    pub fn stream(&self, modality: Modality) -> &FeatureSequence {
        match modality {
            Modality::Kinematics => &self.kinematics,
            Modality::Vision => &self.vision,
            Modality::Events => &self.events,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[serde(alias = "kin")]
    Kinematics,
    #[serde(alias = "vis")]
    Vision,
    #[serde(alias = "evt")]
    Events,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Kinematics, Modality::Vision, Modality::Events];

    pub fn short_name(self) -> &'static str {
        match self {
            Modality::Kinematics => "kin",
            Modality::Vision => "vis",
            Modality::Events => "evt",
        }
    }
}

/// A maximal run of identical labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub state: usize,
    pub start: usize,
    pub length: usize,
}

/// Run-length encodes a label sequence.
pub fn segment_runs(labels: &[usize]) -> Result<Vec<Segment>> {
    let (&first, rest) = labels.split_first().ok_or(Error::EmptySequence)?;
    let mut out = vec![Segment {
        state: first,
        start: 0,
        length: 1,
    }];
    for (i, &l) in rest.iter().enumerate() {
        let cur = out.last_mut().unwrap();
        if l == cur.state {
            cur.length += 1;
        } else {
            out.push(Segment {
                state: l,
                start: i + 1,
                length: 1,
            });
        }
    }
    Ok(out)
}

/// Inverse of [`segment_runs`].
pub fn decode_runs(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.state, s.length))
        .collect()
}

/// `T x b` row-stochastic matrix: one model's per-frame state distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbSeries {
    probs: Matrix,
}

impl ProbSeries {
    pub fn new(probs: Matrix) -> Result<Self> {
        for (t, row) in probs.iter_rows().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!(
                    "probability row {t} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!("probability row {t} sums to {s}")));
            }
        }
        Ok(ProbSeries { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    pub fn n_states(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.probs
    }

    /// Frame-wise argmax, ties to the lowest state index.
    pub fn decisions(&self) -> StateSequence {
        StateSequence::from_labels(self.probs.iter_rows().map(argmax).collect())
    }

    pub fn slice(&self, start: usize, end: usize) -> ProbSeries {
        ProbSeries {
            probs: self.probs.slice_rows(start, end),
        }
    }
}

/// One leave-one-user-out fold, as indices into the trial list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub user_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct user, in order of first appearance.
pub fn louo_splits(trials: &[TrialBundle]) -> Result<Vec<Fold>> {
    louo_splits_by_user(trials.iter().map(|t| t.user_id.as_str()))
}

pub fn louo_splits_by_user<'a>(users: impl IntoIterator<Item = &'a str>) -> Result<Vec<Fold>> {
    let users: Vec<&str> = users.into_iter().collect();
    let mut order: Vec<&str> = Vec::new();
    for u in &users {
        if !order.contains(u) {
            order.push(u);
        }
    }
    if order.len() < 2 {
        return Err(Error::invalid("LOUO requires ≥2 users"));
    }
    Ok(order
        .into_iter()
        .map(|u| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..users.len()).partition(|&i| users[i] == u);
            Fold {
                user_id: u.to_string(),
                train,
                test,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn runs_by_inspection() {
        let segs = segment_runs(&[0, 0, 1]).unwrap();
        assert_eq!(
            segs,
            vec![
                Segment { state: 0, start: 0, length: 2 },
                Segment { state: 1, start: 2, length: 1 }
            ]
        );
        assert_eq!(
            segment_runs(&[0]).unwrap(),
            vec![Segment { state: 0, start: 0, length: 1 }]
        );
        assert_eq!(segment_runs(&[0, 1, 0, 1]).unwrap().len(), 4);
        assert!(matches!(segment_runs(&[]), Err(Error::EmptySequence)));
    }

    proptest! {
        #[test]
        fn runs_decode_roundtrip(labels in prop::collection::vec(0usize..4, 1..200)) {
            let segs = segment_runs(&labels).unwrap();
            prop_assert_eq!(decode_runs(&segs), labels);
            for w in segs.windows(2) {
                prop_assert_ne!(w[0].state, w[1].state);
                prop_assert_eq!(w[0].start + w[0].length, w[1].start);
            }
        }

        #[test]
        fn louo_each_trial_tested_once(users in prop::collection::vec(0u8..5, 2..40)) {
            let names: Vec<String> = users.iter().map(|u| format!("u{u}")).collect();
            let res = louo_splits_by_user(names.iter().map(String::as_str));
            let distinct: std::collections::BTreeSet<_> = users.iter().collect();
            if distinct.len() < 2 {
                prop_assert!(res.is_err());
            } else {
                let folds = res.unwrap();
                prop_assert_eq!(folds.len(), distinct.len());
                let mut seen = vec![0usize; names.len()];
                for f in &folds {
                    prop_assert_eq!(f.train.len() + f.test.len(), names.len());
                    for &i in &f.test {
                        seen[i] += 1;
                        prop_assert_eq!(&names[i], &f.user_id);
                    }
                    for &i in &f.train {
                        prop_assert_ne!(&names[i], &f.user_id);
                    }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn louo_two_users() {
        let folds = louo_splits_by_user(["u1", "u2"]).unwrap();
        assert_eq!(folds[0].train, vec![1]);
        assert_eq!(folds[0].test, vec![0]);
        assert_eq!(folds[1].train, vec![0]);
        assert_eq!(folds[1].test, vec![1]);
    }

    #[test]
    fn louo_five_users_five_folds() {
        let users: Vec<String> = (0..30).map(|i| format!("user{}", i % 5)).collect();
        let folds = louo_splits_by_user(users.iter().map(String::as_str)).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.test.len() == 6));
    }

    #[test]
    fn louo_single_user_rejected() {
        let err = louo_splits_by_user(["a", "a"]).unwrap_err();
        assert!(err.to_string().contains("LOUO requires ≥2 users"));
    }

    #[test]
    fn vocab_rules() {
        assert!(StateVocab::new(["A"]).is_err());
        assert!(StateVocab::new(["A", "A"]).is_err());
        let v = StateVocab::new(["G1", "G2", "G3"]).unwrap();
        assert_eq!(v.index_of("G3"), Some(2));
        let json = serde_json::to_string(&v).unwrap();
        let back: StateVocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.index_of("G2"), Some(1));
    }

    #[test]
    fn prob_series_validation() {
        let ok = Matrix::from_rows(&[[0.25, 0.75], [1.0, 0.0]]).unwrap();
        assert!(ProbSeries::new(ok).is_ok());
        let bad = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(ProbSeries::new(bad).is_err());
    }

    #[test]
    fn trial_bundle_checks_alignment() {
        let fs = |t: usize| FeatureSequence::new(Matrix::zeros(t, 2), 10.0).unwrap();
        let labels = StateSequence::new(vec![0, 1, 1], 2).unwrap();
        assert!(TrialBundle::new(fs(3), fs(3), fs(3), labels.clone(), "u", "t").is_ok());
        assert!(TrialBundle::new(fs(3), fs(4), fs(3), labels.clone(), "u", "t").is_err());
        let ev = FeatureSequence::new(Matrix::filled(3, 2, 0.5), 10.0).unwrap();
        assert!(TrialBundle::new(fs(3), fs(3), ev, labels, "u", "t").is_err());
    }
}
