use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A named, shaped parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }
}

/// Ordered collection of parameter tensors. Shapes are fixed once built; the
/// order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Adds a zero tensor and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        self.tensors.push(Tensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    /// Gaussian init with standard deviation `sqrt(2 / fan_in)`.
    pub fn init_he<R: Rng>(&mut self, slot: usize, fan_in: usize, rng: &mut R) {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.init_normal(slot, std, rng);
    }

    pub fn init_normal<R: Rng>(&mut self, slot: usize, std: f64, rng: &mut R) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in &mut self.tensors[slot].data {
            *v = dist.sample(rng);
        }
    }

    pub fn init_uniform<R: Rng>(&mut self, slot: usize, bound: f64, rng: &mut R) {
        for v in &mut self.tensors[slot].data {
            *v = rng.random_range(-bound..=bound);
        }
    }

    pub fn fill(&mut self, slot: usize, value: f64) {
        self.tensors[slot].data.fill(value);
    }

    pub fn get(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].data
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.tensors[slot].data
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), &t.shape))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(0.0);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    /// `self += other`, which must have the same layout.
    pub fn accumulate(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Replace the values from tensors with matching names and shapes.
    pub fn load_from(&mut self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.tensors.len()
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(tensors) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::shape(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}
