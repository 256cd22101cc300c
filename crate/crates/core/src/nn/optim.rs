use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Sgd {
        learning_rate: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig::Sgd { learning_rate }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { learning_rate, .. } | OptimizerConfig::Sgd { learning_rate } => {
                learning_rate
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps, .. } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::config("adam betas must lie in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(1e-3)
    }
}

/// Stateful optimizer bound to one parameter layout.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    m: Option<ParamSet>,
    v: Option<ParamSet>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            lr: config.learning_rate(),
            config,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Overrides the current rate (schedules).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        debug_assert!(params.same_layout(grads));
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { .. } => sgd_step(params, grads, self.lr),
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                let m = self.m.get_or_insert_with(|| params.zeros_like());
                let v = self.v.get_or_insert_with(|| params.zeros_like());
                adam_update(params, grads, m, v, self.step, self.lr, beta1, beta2, eps);
            }
        }
    }
}

pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64) {
    for (p, g) in params.tensors_mut().iter_mut().zip(grads.tensors()) {
        for (x, d) in p.data.iter_mut().zip(&g.data) {
            *x -= lr * d;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut ParamSet,
    grads: &ParamSet,
    m: &mut ParamSet,
    v: &mut ParamSet,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
    for ((p, g), (mt, vt)) in tensors.zip(m.tensors_mut().iter_mut().zip(v.tensors_mut())) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            mt.data[i] = beta1 * mt.data[i] + (1.0 - beta1) * gi;
            vt.data[i] = beta2 * vt.data[i] + (1.0 - beta2) * gi * gi;
            let m_hat = mt.data[i] / bc1;
            let v_hat = vt.data[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_param(vals: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        let s = p.add("w", &[vals.len()]);
        p.get_mut(s).copy_from_slice(vals);
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for cfg in [OptimizerConfig::adam(1e-3), OptimizerConfig::sgd(0.5)] {
            let mut p = one_param(&[1.0, -2.0]);
            let g = one_param(&[0.0, 0.0]);
            let mut opt = Optimizer::new(cfg);
            for _ in 0..5 {
                opt.step(&mut p, &g);
            }
            assert_eq!(p.get(0), &[1.0, -2.0]);
        }
    }

    #[test]
    fn sgd_unit_rate_subtracts_gradient() {
        let mut p = one_param(&[1.0, -2.0]);
        let g = one_param(&[0.25, -0.5]);
        Optimizer::new(OptimizerConfig::sgd(1.0)).step(&mut p, &g);
        assert_eq!(p.get(0), &[0.75, -1.5]);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        for cfg in [OptimizerConfig::adam(0.0), OptimizerConfig::sgd(0.0)] {
            let mut p = one_param(&[0.3]);
            let g = one_param(&[7.0]);
            Optimizer::new(cfg).step(&mut p, &g);
            assert_eq!(p.get(0), &[0.3]);
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        for &g in &[1e-3, 0.5, 40.0, -3.0] {
            let mut p = one_param(&[0.0]);
            let grad = one_param(&[g]);
            Optimizer::new(OptimizerConfig::adam(1e-3)).step(&mut p, &grad);
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert_relative_eq!(p.get(0)[0], expected, epsilon = 1e-15);
            assert_relative_eq!(p.get(0)[0].abs(), 1e-3, max_relative = 1e-4);
        }
    }

    #[test]
    fn rejects_negative_rate() {
        assert!(OptimizerConfig::sgd(-1.0).validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
