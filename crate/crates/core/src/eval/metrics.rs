//! Frame accuracy, segment edit score and per-model reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{segment_runs, StateSequence};
use crate::error::{Error, Result};

fn check_lengths(pred: &StateSequence, gt: &StateSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

/// Percentage of frames whose label matches.
pub fn frame_accuracy(pred: &StateSequence, gt: &StateSequence) -> Result<f64> {
    check_lengths(pred, gt)?;
    let hits = pred.labels().iter().zip(gt.labels()).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Unit-cost edit distance (two-row dynamic programme).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Segment-level state string: one entry per run of identical labels.
pub fn segment_string(seq: &StateSequence) -> Result<Vec<usize>> {
    Ok(segment_runs(seq.labels())?.into_iter().map(|s| s.state).collect())
}

/// `100 * (1 - D / max(|segments(pred)|, |segments(gt)|))`, floored at 0.
pub fn edit_score(pred: &StateSequence, gt: &StateSequence) -> Result<f64> {
    check_lengths(pred, gt)?;
    let p = segment_string(pred)?;
    let g = segment_string(gt)?;
    let d = levenshtein(&p, &g) as f64;
    Ok((100.0 * (1.0 - d / p.len().max(g.len()) as f64)).max(0.0))
}

/// `confusion[true][predicted]` frame counts.
pub fn confusion_matrix(pred: &StateSequence, gt: &StateSequence, n_states: usize) -> Result<Vec<Vec<u64>>> {
    check_lengths(pred, gt)?;
    let mut m = vec![vec![0u64; n_states]; n_states];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p >= n_states || g >= n_states {
            return Err(Error::invalid(format!("label outside {n_states} states")));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub frame_accuracy_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_score: Option<f64>,
    /// Recall per true state; `None` when the state never occurs.
    pub per_state_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricReport {
    /// Scores a set of trials pooled together. The edit score is the mean over
    /// trials, computed only when `with_edit` is set.
    pub fn compute(
        model: &str,
        pairs: &[(&StateSequence, &StateSequence)],
        n_states: usize,
        with_edit: bool,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("no trials to score"));
        }
        let mut confusion = vec![vec![0u64; n_states]; n_states];
        let mut edits = 0.0;
        for (pred, gt) in pairs {
            let c = confusion_matrix(pred, gt, n_states)?;
            for (row, add) in confusion.iter_mut().zip(c) {
                row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
            }
            if with_edit {
                edits += edit_score(pred, gt)?;
            }
        }
        let total: u64 = confusion.iter().flatten().sum();
        let hits: u64 = (0..n_states).map(|j| confusion[j][j]).sum();
        Ok(MetricReport {
            model: model.to_string(),
            frame_accuracy_pct: 100.0 * hits as f64 / total as f64,
            edit_score: with_edit.then(|| edits / pairs.len() as f64),
            per_state_accuracy: per_state(&confusion),
            confusion,
        })
    }

    /// Unweighted mean of fold accuracies and edit scores; confusion counts add.
    pub fn aggregate(folds: &[&MetricReport]) -> Result<Self> {
        let first = folds.first().ok_or_else(|| Error::invalid("no folds to aggregate"))?;
        let b = first.confusion.len();
        let mut confusion = vec![vec![0u64; b]; b];
        let mut acc = 0.0;
        let mut edit = Some(0.0);
        for f in folds {
            if f.confusion.len() != b || f.model != first.model {
                return Err(Error::shape("fold reports differ in model or state count"));
            }
            for (row, add) in confusion.iter_mut().zip(&f.confusion) {
                row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
            }
            acc += f.frame_accuracy_pct;
            edit = edit.zip(f.edit_score).map(|(a, e)| a + e);
        }
        let n = folds.len() as f64;
        Ok(MetricReport {
            model: first.model.clone(),
            frame_accuracy_pct: acc / n,
            edit_score: edit.map(|e| e / n),
            per_state_accuracy: per_state(&confusion),
            confusion,
        })
    }
}

fn per_state(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| 100.0 * row[j] as f64 / n as f64)
        })
        .collect()
}

/// Flat CSV: `scope,model,frame_accuracy_pct[,edit_score]`, one row per report.
pub fn write_reports_csv<W: Write>(mut w: W, rows: &[(String, &MetricReport)]) -> std::io::Result<()> {
    let with_edit = rows.iter().any(|(_, r)| r.edit_score.is_some());
    write!(w, "scope,model,frame_accuracy_pct")?;
    if with_edit {
        write!(w, ",edit_score")?;
    }
    writeln!(w)?;
    for (scope, r) in rows {
        write!(w, "{scope},{},{}", r.model, r.frame_accuracy_pct)?;
        if with_edit {
            match r.edit_score {
                Some(e) => write!(w, ",{e}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(v: &[usize]) -> StateSequence {
        StateSequence::from_labels(v.to_vec())
    }

    fn brute(a: &[usize], b: &[usize]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(frame_accuracy(&seq(&[0, 1, 2]), &seq(&[0, 1, 2])).unwrap(), 100.0);
        assert_eq!(frame_accuracy(&seq(&[1, 2, 0]), &seq(&[0, 1, 2])).unwrap(), 0.0);
        assert_eq!(frame_accuracy(&seq(&[0, 0, 1, 1]), &seq(&[0, 1, 1, 0])).unwrap(), 50.0);
        assert!(frame_accuracy(&seq(&[0]), &seq(&[0, 1])).is_err());
    }

    #[test]
    fn levenshtein_cases() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein::<usize>(&[1, 2, 3, 4], &[]), 4);
        assert_eq!(levenshtein::<usize>(&[], &[]), 0);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    #[test]
    fn levenshtein_matches_brute_force_short() {
        // all strings of length <= 4 over 3 symbols; the full length-6 sweep runs in the acceptance suite
        let mut all: Vec<Vec<usize>> = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..4 {
            frontier = frontier
                .iter()
                .flat_map(|s: &Vec<usize>| (0..3).map(move |c| [s.clone(), vec![c]].concat()))
                .collect();
            all.extend(frontier.iter().cloned());
        }
        for a in &all {
            for b in &all {
                assert_eq!(levenshtein(a, b), brute(a, b), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn edit_score_cases() {
        assert_eq!(edit_score(&seq(&[0, 0, 1, 1, 2]), &seq(&[0, 0, 1, 1, 2])).unwrap(), 100.0);
        // same segment string, different boundaries
        assert_eq!(edit_score(&seq(&[0, 1, 1, 1, 2]), &seq(&[0, 0, 0, 1, 2])).unwrap(), 100.0);
        // single predicted segment vs 4 distinct gt segments: D = 3
        let s = edit_score(&seq(&[0; 4]), &seq(&[0, 1, 2, 3])).unwrap();
        assert!((s - 25.0).abs() < 1e-12);
        let s = edit_score(&seq(&[5; 4]), &seq(&[0, 1, 2, 3])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn report_counts_and_aggregate() {
        let gt = seq(&[0, 0, 1, 1, 2]);
        let pred = seq(&[0, 1, 1, 1, 1]);
        let r = MetricReport::compute("m", &[(&pred, &gt)], 3, true).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 2, 0], vec![0, 1, 0]]);
        assert_eq!(r.frame_accuracy_pct, 60.0);
        assert_eq!(r.per_state_accuracy, vec![Some(50.0), Some(100.0), Some(0.0)]);
        // gt segments 0,1,2; pred 0,1 -> one deletion
        assert!((r.edit_score.unwrap() - 100.0 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        let r2 = MetricReport::compute("m", &[(&gt, &gt)], 3, false).unwrap();
        assert!(r2.edit_score.is_none());
        let agg = MetricReport::aggregate(&[&r, &r2]).unwrap();
        assert_eq!(agg.frame_accuracy_pct, 80.0);
        assert!(agg.edit_score.is_none());
        assert_eq!(agg.confusion[1], vec![0, 4, 0]);
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[("fold".into(), &r), ("all".into(), &agg)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scope,model,frame_accuracy_pct,edit_score\n"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&json).unwrap(), r);
    }

    fn labels(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..3, 0..max_len)
    }

    proptest! {
        #[test]
        fn levenshtein_metric_axioms(a in labels(9), b in labels(9), c in labels(9)) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
            prop_assert_eq!(ab == 0, a == b);
        }

        #[test]
        fn edit_score_range_and_identity(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..30)) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let (p, g) = (seq(&p), seq(&g));
            let s = edit_score(&p, &g).unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
            prop_assert_eq!(s == 100.0, segment_string(&p).unwrap() == segment_string(&g).unwrap());
        }

        #[test]
        fn accuracy_permutation_equivariant(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40), rot in 0usize..40) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let k = rot % pairs.len();
            let mut q = pairs.clone();
            q.rotate_left(k);
            q.reverse();
            let (p2, g2): (Vec<usize>, Vec<usize>) = q.into_iter().unzip();
            prop_assert_eq!(
                frame_accuracy(&seq(&p), &seq(&g)).unwrap(),
                frame_accuracy(&seq(&p2), &seq(&g2)).unwrap()
            );
        }
    }
}
