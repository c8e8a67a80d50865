//! Adaptive moment estimation (Adam) with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, CoreError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.dims())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return shape_err(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dims() != g.dims() || p.dims() != self.first[i].dims() {
                return shape_err(format!(
                    "parameter {i}: dims {:?}, gradient {:?}",
                    p.dims(),
                    g.dims()
                ));
            }
            if !g.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "non-finite gradient for parameter {i} at step {}",
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![Tensor::from_fn(&[3], |i| i as f64)];
        let before = params.clone();
        let mut opt = Adam::new(AdamConfig::default(), &params);
        for _ in 0..10 {
            opt.step(&mut params, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 10);
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let mut prev = 0.0;
        for _ in 0..50 {
            opt.step(&mut params, &[Tensor::scalar(2.5)]).unwrap();
            let now = params[0].item().unwrap();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut params = vec![Tensor::scalar(0.0)];
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &params);
        for _ in 0..2000 {
            let x = params[0].item().unwrap();
            opt.step(&mut params, &[Tensor::scalar(2.0 * (x - 5.0))]).unwrap();
        }
        assert!((params[0].item().unwrap() - 5.0).abs() < 1e-2);
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let err = opt.step(&mut params, &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(CoreError::Diverged(_))));
        assert_eq!(params[0].item().unwrap(), 1.0);
        assert_eq!(opt.step_count(), 0);
    }
}
