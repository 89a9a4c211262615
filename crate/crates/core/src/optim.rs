//! AMSGrad optimizer, used for every training phase.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// AMSGrad state over a flat parameter vector. Keeps the running maximum of
/// the second-moment estimate and applies bias correction to both moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmsGrad {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    v_hat_max: Vec<f64>,
    step_count: u64,
}

impl AmsGrad {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self::with_hyperparams(param_count, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        param_count: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            v_hat_max: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn v_hat_max(&self) -> &[f64] {
        &self.v_hat_max
    }

    /// One update. Mutates `params` in place and returns the applied
    /// delta-theta (consumed by SI accumulation). Non-finite gradients
    /// reject the step and leave all state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(params.len(), self.m.len(), "optimizer/param size mismatch");
        assert_eq!(grads.len(), self.m.len(), "optimizer/grad size mismatch");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: self.step_count + 1,
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut delta = vec![0.0; params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.v[i] > self.v_hat_max[i] {
                self.v_hat_max[i] = self.v[i];
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v_hat_max[i] / bc2;
            let d = -self.lr * m_hat / (v_hat.sqrt() + self.eps);
            delta[i] = d;
            params[i] += d;
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_fresh_state_is_a_noop() {
        let mut opt = AmsGrad::new(3, 1e-3);
        let mut params = vec![1.0, -2.0, 0.5];
        let delta = opt.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(delta, vec![0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_hand_evaluation() {
        // g=1: m=0.1, v=0.001, bias-corrected m_hat=1, v_hat=1, so
        // delta = -lr / (1 + eps) which is about -1e-3.
        let mut opt = AmsGrad::with_hyperparams(1, 1e-3, 0.9, 0.999, 1e-8);
        let mut params = vec![0.0];
        let delta = opt.step(&mut params, &[1.0]).unwrap();
        assert!((delta[0] + 1e-3).abs() < 1e-9, "delta {}", delta[0]);
        assert!((params[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn v_hat_max_is_monotone() {
        let mut opt = AmsGrad::new(1, 1e-3);
        let mut params = vec![0.0];
        let grads = [1.0, -1.0, 0.1, 0.0, 2.0, -0.5];
        let mut prev = 0.0;
        for g in grads {
            opt.step(&mut params, &[g]).unwrap();
            assert!(opt.v_hat_max()[0] >= prev);
            prev = opt.v_hat_max()[0];
        }
    }

    #[test]
    fn zero_betas_first_step_is_sign_scaled_descent() {
        let mut opt = AmsGrad::with_hyperparams(2, 0.01, 0.0, 0.0, 1e-8);
        let mut params = vec![0.0, 0.0];
        let g = [3.0, -0.2];
        let delta = opt.step(&mut params, &g).unwrap();
        for i in 0..2 {
            let expect = -0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((delta[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_rejects_step() {
        let mut opt = AmsGrad::new(2, 1e-3);
        let mut params = vec![1.0, 2.0];
        let before = opt.clone();
        let err = opt.step(&mut params, &[f64::NAN, 0.0]);
        assert!(matches!(err, Err(Error::NonFiniteGradient { .. })));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(opt, before);
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut opt = AmsGrad::new(2, 1e-3);
            let mut params = vec![0.4, -0.3];
            for i in 0..10 {
                let g = [(i as f64).sin(), (i as f64).cos()];
                opt.step(&mut params, &g).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
