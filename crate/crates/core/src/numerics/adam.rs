//! Adam with bias correction, decoupled weight decay, and the
//! warmup/inverse-square-root learning-rate schedule.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::params::{ParamDesc, ParamTensors};
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults are the transformer-training
/// conventions used throughout: beta1 0.9, beta2 0.98, eps 1e-8, weight
/// decay 0.01, and a 1e-7 -> 5e-4 warmup over 4,000 steps followed by
/// inverse-square-root decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub floor_lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            peak_lr: 5e-4,
            warmup_steps: 4_000,
            floor_lr: 1e-7,
        }
    }
}

/// Learning rate at `step` (1-based): linear interpolation from the floor to
/// the peak across the warmup, then `peak * sqrt(warmup / step)`. Continuous
/// at the warmup boundary.
pub fn lr_at(step: u64, config: &AdamConfig) -> f64 {
    debug_assert!(step >= 1);
    if step <= config.warmup_steps {
        if config.warmup_steps <= 1 {
            return config.peak_lr;
        }
        let frac = (step - 1) as f64 / (config.warmup_steps - 1) as f64;
        config.floor_lr + (config.peak_lr - config.floor_lr) * frac
    } else {
        config.peak_lr * (config.warmup_steps as f64 / step as f64).sqrt()
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
    decay_mask: Vec<bool>,
}

impl AdamState {
    pub fn new<P: ParamTensors>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<_> = params.param_views().iter().map(|v| v.raw_dim()).collect();
        let descs = params.param_descs();
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            second: shapes.iter().map(|s| ArrayD::zeros(s.clone())).collect(),
            decay_mask: descs.iter().map(|d: &ParamDesc| d.decay).collect(),
        }
    }

    /// One update. Increments the step counter, applies the scheduled
    /// learning rate, bias-corrected moments, and decoupled weight decay
    /// (scaled by the step's learning rate) on tensors flagged for decay.
    /// Returns the learning rate used.
    pub fn step<P: ParamTensors>(&mut self, params: &mut P, grads: &P) -> Result<f64> {
        self.step += 1;
        let lr = lr_at(self.step, &self.config);
        let bc1 = 1.0 - self.config.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.config.beta2.powi(self.step as i32);
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let eps = self.config.eps;
        let wd = self.config.weight_decay;

        let grad_views = grads.param_views();
        let mut param_views = params.param_views_mut();
        if grad_views.len() != self.first.len() || param_views.len() != self.first.len() {
            return Err(Error::shape("optimizer state does not match parameter set"));
        }
        for (idx, theta) in param_views.iter_mut().enumerate() {
            let g = &grad_views[idx];
            if g.shape() != theta.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} vs parameter shape {:?} at tensor {idx}",
                    g.shape(),
                    theta.shape()
                )));
            }
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let decay = if self.decay_mask[idx] { wd } else { 0.0 };
            for (((t, &g), m), v) in theta.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * *t);
            }
        }
        Ok(lr)
    }
}

/// Free-function form of one Adam update, per the module contract.
pub fn adam_step<P: ParamTensors>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<f64> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayViewD, ArrayViewMutD};

    struct Scalar(ndarray::ArrayD<f64>);

    impl Scalar {
        fn new(x: f64) -> Self {
            Scalar(ndarray::ArrayD::from_elem(ndarray::IxDyn(&[1]), x))
        }
        fn get(&self) -> f64 {
            self.0[[0]]
        }
    }

    impl ParamTensors for Scalar {
        fn param_descs(&self) -> Vec<ParamDesc> {
            vec![ParamDesc::new("theta", true)]
        }
        fn param_views(&self) -> Vec<ArrayViewD<'_, f64>> {
            vec![self.0.view()]
        }
        fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
            vec![self.0.view_mut()]
        }
    }

    #[test]
    fn schedule_endpoints_and_decay() {
        let c = AdamConfig::default();
        assert_abs_diff_eq!(lr_at(1, &c), 1e-7, epsilon = 1e-16);
        assert_abs_diff_eq!(lr_at(4_000, &c), 5e-4, epsilon = 1e-16);
        // 5e-4 * sqrt(4000/16000) = 2.5e-4, computed by hand.
        assert_abs_diff_eq!(lr_at(16_000, &c), 2.5e-4, epsilon = 1e-12);
    }

    #[test]
    fn schedule_continuous_at_warmup_boundary() {
        let c = AdamConfig::default();
        let before = lr_at(4_000, &c);
        let after = lr_at(4_001, &c);
        assert!((before - after).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut theta = Scalar::new(1.25);
        let grads = Scalar::new(0.0);
        let mut state = AdamState::new(&theta, AdamConfig { weight_decay: 0.0, ..AdamConfig::default() });
        for _ in 0..3 {
            adam_step(&mut theta, &grads, &mut state).unwrap();
        }
        assert_eq!(theta.get(), 1.25);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn descends_on_quadratic() {
        // f(theta) = theta^2, grad = 2 theta, theta_0 = 1.
        let mut theta = Scalar::new(1.0);
        let mut state = AdamState::new(
            &theta,
            AdamConfig { weight_decay: 0.0, peak_lr: 0.1, warmup_steps: 1, ..AdamConfig::default() },
        );
        let before = theta.get();
        let grads = Scalar::new(2.0 * before);
        adam_step(&mut theta, &grads, &mut state).unwrap();
        assert!(theta.get() < before);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut theta = Scalar::new(0.5);
            let mut state = AdamState::new(&theta, AdamConfig::default());
            for i in 0..10 {
                let grads = Scalar::new((i as f64).sin() + theta.get());
                adam_step(&mut theta, &grads, &mut state).unwrap();
            }
            theta.get().to_bits()
        };
        assert_eq!(run(), run());
    }
}
