//! Bagged CART trees over binary channels (Gini impurity, random feature
//! subsets per split, vote-fraction probabilities).

use rand::seq::SliceRandom;

use super::patterns::{bit, Cell, PatternSet};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    /// Split channel, or `None` for a leaf.
    pub feature: Option<usize>,
    /// Child for channel value 0 / 1.
    pub left: usize,
    pub right: usize,
    /// Majority class (leaves only).
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, bits: u64) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.class,
                Some(f) => i = if bit(bits, f) { n.right } else { n.left },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].feature {
                None => 0,
                Some(_) => 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub n_states: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Fraction of trees voting for each class.
    pub fn predict_bits(&self, bits: u64) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_states];
        for t in &self.trees {
            votes[t.predict(bits)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }
}

fn class_counts(cells: &[Cell], n_states: usize) -> Vec<f64> {
    let mut c = vec![0.0; n_states];
    for cell in cells {
        c[cell.label] += cell.weight;
    }
    c
}

fn gini(counts: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

fn majority(counts: &[f64]) -> usize {
    crate::matrix::argmax(counts)
}

struct Builder<'a> {
    n_features: usize,
    n_states: usize,
    mtry: usize,
    min_samples_split: f64,
    rng: &'a mut Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, cells: Vec<Cell>) -> usize {
        let counts = class_counts(&cells, self.n_states);
        let total: f64 = counts.iter().sum();
        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: None,
            left: 0,
            right: 0,
            class: majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || total < self.min_samples_split {
            return id;
        }
        let mut order: Vec<usize> = (0..self.n_features).collect();
        order.shuffle(self.rng);
        let mut best: Option<(f64, usize)> = None;
        // keep drawing past `mtry` until at least one valid split is seen
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            let mut lc = vec![0.0; self.n_states];
            let mut rc = vec![0.0; self.n_states];
            for c in &cells {
                if bit(c.bits, f) {
                    rc[c.label] += c.weight;
                } else {
                    lc[c.label] += c.weight;
                }
            }
            let (ln, rn): (f64, f64) = (lc.iter().sum(), rc.iter().sum());
            if ln == 0.0 || rn == 0.0 {
                continue;
            }
            let imp = (ln * gini(&lc) + rn * gini(&rc)) / total;
            if best.is_none_or(|(b, _)| imp < b) {
                best = Some((imp, f));
            }
        }
        let Some((_, f)) = best else {
            return id;
        };
        let (r, l): (Vec<Cell>, Vec<Cell>) = cells.into_iter().partition(|c| bit(c.bits, f));
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node {
            feature: Some(f),
            left,
            right,
            class: self.nodes[id].class,
        };
        id
    }
}

/// Features drawn per split: `round(sqrt(n))`, at least one.
pub fn features_per_split(n_features: usize) -> usize {
    ((n_features as f64).sqrt().round() as usize).max(1)
}

pub fn fit_tree(data: &PatternSet, min_samples_split: usize, rng: &mut Rng) -> Tree {
    let mut b = Builder {
        n_features: data.n_features,
        n_states: data.n_states,
        mtry: features_per_split(data.n_features),
        min_samples_split: min_samples_split as f64,
        rng,
        nodes: Vec::new(),
    };
    b.grow(data.cells.clone());
    Tree { nodes: b.nodes }
}

pub fn fit_forest(data: &PatternSet, n_trees: usize, min_samples_split: usize, rng: &mut Rng) -> Forest {
    if data.n_classes_present() < 2 {
        log::warn!("random forest fitted on single-class data; predictions are constant");
    }
    let trees = (0..n_trees.max(1))
        .map(|_| {
            let sample = data.bootstrap(rng);
            fit_tree(&sample, min_samples_split, rng)
        })
        .collect();
    Forest {
        n_states: data.n_states,
        trees,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::seed;

    fn set(rows: &[[f64; 2]], labels: &[usize], n_states: usize) -> PatternSet {
        PatternSet::from_frames(&Matrix::from_rows(rows).unwrap(), labels, n_states).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5.0, 5.0]), 0.5);
        assert_eq!(gini(&[3.0, 0.0]), 0.0);
    }

    #[test]
    fn single_tree_memorizes_xor() {
        let d = set(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], &[0, 1, 1, 0], 2);
        let mut rng = seed::stream(1, "t");
        let t = fit_tree(&d, 2, &mut rng);
        for (bits, want) in [(0b00, 0), (0b10, 1), (0b01, 1), (0b11, 0)] {
            assert_eq!(t.predict(bits), want);
        }
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn min_samples_split_stops_growth() {
        let d = set(&[[0.0, 0.0], [1.0, 0.0]], &[0, 1], 2);
        let mut rng = seed::stream(1, "t");
        assert_eq!(fit_tree(&d, 3, &mut rng).nodes.len(), 1);
        assert_eq!(fit_tree(&d, 2, &mut rng).nodes.len(), 3);
    }

    #[test]
    fn forest_xor_accuracy() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let (a, b) = (i % 2, (i / 2) % 2);
            rows.push([a as f64, b as f64]);
            labels.push(a ^ b);
        }
        let d = set(&rows, &labels, 2);
        let mut rng = seed::stream(2, "f");
        let f = fit_forest(&d, 50, 2, &mut rng);
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| {
                let bits = super::super::patterns::encode(&r[..]).unwrap();
                crate::matrix::argmax(&f.predict_bits(bits)) == l
            })
            .count();
        assert!(correct as f64 / 40.0 > 0.9);
        let p = f.predict_bits(0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_constant() {
        let d = set(&[[0.0, 1.0], [1.0, 0.0]], &[1, 1], 3);
        let mut rng = seed::stream(3, "f");
        let f = fit_forest(&d, 5, 2, &mut rng);
        assert_eq!(f.predict_bits(0b11), vec![0.0, 1.0, 0.0]);
    }
}
