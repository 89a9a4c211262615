//! Per-parameter importance accumulation (SI and MAS) and the quadratic
//! drift penalties built from it.
//!
//! Both states work over the network's flat parameter layout. The task
//! lifecycle is: accumulate during training, consolidate once at each task
//! boundary (which folds the running importance into the cumulative omega
//! and freezes the reference parameters), then evaluate the penalty against
//! the reference while the next task trains.

use crate::error::{Error, Result};
use crate::losses::RegPenalty;
use serde::{Deserialize, Serialize};

/// Synaptic-intelligence state: a running path integral per parameter,
/// normalized at consolidation by the squared task drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiState {
    omega_accum: Vec<f64>,
    omega_cum: Vec<f64>,
    theta_ref: Vec<f64>,
    theta_task_start: Vec<f64>,
    xi: f64,
    steps_since_consolidation: u64,
}

impl SiState {
    pub fn new(theta0: &[f64], xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::InvalidConfig("SI damping xi must be > 0".into()));
        }
        Ok(Self {
            omega_accum: vec![0.0; theta0.len()],
            omega_cum: vec![0.0; theta0.len()],
            theta_ref: theta0.to_vec(),
            theta_task_start: theta0.to_vec(),
            xi,
            steps_since_consolidation: 0,
        })
    }

    /// Accumulates one optimizer step: omega_k += -grad_k * delta_theta_k,
    /// with gradients taken at the pre-update parameters. The minus sign
    /// makes omega positive along loss-decreasing trajectories.
    pub fn accumulate_step(&mut self, grads: &[f64], delta_theta: &[f64]) -> Result<()> {
        if grads.len() != self.omega_accum.len() || delta_theta.len() != self.omega_accum.len() {
            return Err(Error::DimensionMismatch {
                context: "si accumulate_step",
                expected: self.omega_accum.len(),
                actual: grads.len().max(delta_theta.len()),
            });
        }
        for ((w, g), d) in self.omega_accum.iter_mut().zip(grads).zip(delta_theta) {
            *w += -g * d;
        }
        self.steps_since_consolidation += 1;
        Ok(())
    }

    /// Task-boundary normalization: omega_cum_k += max(0, omega_k) /
    /// (drift_k^2 + xi), where drift is measured from the task start; then
    /// resets the running sums and freezes theta_now as the new reference.
    /// Consolidating twice without intervening steps is a warned no-op.
    pub fn consolidate(&mut self, theta_now: &[f64]) -> Result<()> {
        if theta_now.len() != self.omega_accum.len() {
            return Err(Error::DimensionMismatch {
                context: "si consolidate",
                expected: self.omega_accum.len(),
                actual: theta_now.len(),
            });
        }
        if self.steps_since_consolidation == 0 {
            log::warn!("SI consolidate called with no accumulated steps; ignoring");
            return Ok(());
        }
        for k in 0..self.omega_accum.len() {
            let drift = theta_now[k] - self.theta_task_start[k];
            self.omega_cum[k] += self.omega_accum[k].max(0.0) / (drift * drift + self.xi);
            self.omega_accum[k] = 0.0;
        }
        self.theta_ref.copy_from_slice(theta_now);
        self.theta_task_start.copy_from_slice(theta_now);
        self.steps_since_consolidation = 0;
        Ok(())
    }

    pub fn penalty(&self, theta_now: &[f64]) -> RegPenalty {
        quadratic_penalty(&self.omega_cum, &self.theta_ref, theta_now)
    }

    /// Cumulative importance (capital omega).
    pub fn omega(&self) -> &[f64] {
        &self.omega_cum
    }

    /// Running per-task path integral (lowercase omega).
    pub fn omega_accum(&self) -> &[f64] {
        &self.omega_accum
    }

    pub fn theta_ref(&self) -> &[f64] {
        &self.theta_ref
    }
}

/// Memory-aware-synapses state: mean absolute gradient of the learned
/// function over observed samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasState {
    grad_norm_sum: Vec<f64>,
    sample_count: u64,
    omega: Vec<f64>,
    theta_ref: Vec<f64>,
}

impl MasState {
    pub fn new(theta0: &[f64]) -> Self {
        Self {
            grad_norm_sum: vec![0.0; theta0.len()],
            sample_count: 0,
            omega: vec![0.0; theta0.len()],
            theta_ref: theta0.to_vec(),
        }
    }

    /// Adds one sample's absolute gradient of the learned function.
    pub fn accumulate_sample(&mut self, grads: &[f64]) -> Result<()> {
        if grads.len() != self.grad_norm_sum.len() {
            return Err(Error::DimensionMismatch {
                context: "mas accumulate_sample",
                expected: self.grad_norm_sum.len(),
                actual: grads.len(),
            });
        }
        for (s, g) in self.grad_norm_sum.iter_mut().zip(grads) {
            *s += g.abs();
        }
        self.sample_count += 1;
        Ok(())
    }

    /// Cheaper surrogate: treats a mini-batch mean gradient as every
    /// member's gradient magnitude. Not used by the default pipeline.
    pub fn accumulate_batch_surrogate(&mut self, batch_grads: &[f64], batch_size: u64) -> Result<()> {
        if batch_grads.len() != self.grad_norm_sum.len() {
            return Err(Error::DimensionMismatch {
                context: "mas accumulate_batch_surrogate",
                expected: self.grad_norm_sum.len(),
                actual: batch_grads.len(),
            });
        }
        for (s, g) in self.grad_norm_sum.iter_mut().zip(batch_grads) {
            *s += g.abs() * batch_size as f64;
        }
        self.sample_count += batch_size;
        Ok(())
    }

    /// Divides the accumulated sums by the number of observed samples and
    /// folds the result into the cumulative omega; resets the sums and
    /// freezes theta_now as the reference.
    pub fn consolidate(&mut self, theta_now: &[f64]) -> Result<()> {
        if theta_now.len() != self.grad_norm_sum.len() {
            return Err(Error::DimensionMismatch {
                context: "mas consolidate",
                expected: self.grad_norm_sum.len(),
                actual: theta_now.len(),
            });
        }
        if self.sample_count == 0 {
            return Err(Error::DegenerateInput(
                "MAS consolidation with zero observed samples".into(),
            ));
        }
        let n = self.sample_count as f64;
        for (o, s) in self.omega.iter_mut().zip(self.grad_norm_sum.iter_mut()) {
            *o += *s / n;
            *s = 0.0;
        }
        self.sample_count = 0;
        self.theta_ref.copy_from_slice(theta_now);
        Ok(())
    }

    pub fn penalty(&self, theta_now: &[f64]) -> RegPenalty {
        quadratic_penalty(&self.omega, &self.theta_ref, theta_now)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn theta_ref(&self) -> &[f64] {
        &self.theta_ref
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }
}

/// Sum_k omega_k (theta_ref_k - theta_k)^2 with its gradient
/// d/d theta_k = -2 omega_k (theta_ref_k - theta_k).
pub fn quadratic_penalty(omega: &[f64], theta_ref: &[f64], theta_now: &[f64]) -> RegPenalty {
    debug_assert_eq!(omega.len(), theta_ref.len());
    debug_assert_eq!(omega.len(), theta_now.len());
    let mut value = 0.0;
    let mut grad = vec![0.0; omega.len()];
    for k in 0..omega.len() {
        let diff = theta_ref[k] - theta_now[k];
        value += omega[k] * diff * diff;
        grad[k] = -2.0 * omega[k] * diff;
    }
    RegPenalty { value, grad }
}

/// The regularizer a training run carries across tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImportanceState {
    Si(SiState),
    Mas(MasState),
    None,
}

impl ImportanceState {
    pub fn penalty(&self, theta_now: &[f64]) -> RegPenalty {
        match self {
            ImportanceState::Si(s) => s.penalty(theta_now),
            ImportanceState::Mas(m) => m.penalty(theta_now),
            ImportanceState::None => RegPenalty::zero(theta_now.len()),
        }
    }

    /// Cumulative importance, if a regularizer is active.
    pub fn omega(&self) -> Option<&[f64]> {
        match self {
            ImportanceState::Si(s) => Some(s.omega()),
            ImportanceState::Mas(m) => Some(m.omega()),
            ImportanceState::None => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_zero_gradient_step_changes_nothing() {
        let mut si = SiState::new(&[1.0, 2.0], 1e-3).unwrap();
        si.accumulate_step(&[0.0, 0.0], &[0.1, -0.1]).unwrap();
        assert_eq!(si.omega_accum(), &[0.0, 0.0]);
    }

    #[test]
    fn si_step_hand_arithmetic() {
        let mut si = SiState::new(&[0.0], 1e-3).unwrap();
        si.accumulate_step(&[2.0], &[-0.1]).unwrap();
        assert!((si.omega_accum()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn si_consolidate_hand_arithmetic() {
        // omega=2, drift=2, xi=1e-3: Omega += 2 / 4.001
        let mut si = SiState::new(&[0.0], 1e-3).unwrap();
        si.accumulate_step(&[-20.0], &[0.1]).unwrap();
        assert!((si.omega_accum()[0] - 2.0).abs() < 1e-12);
        si.consolidate(&[2.0]).unwrap();
        let expect = 2.0 / 4.001;
        assert!((si.omega()[0] - expect).abs() < 1e-12);
        assert!((si.omega()[0] - 0.49988).abs() < 1e-5);
        assert_eq!(si.omega_accum(), &[0.0]);
        assert_eq!(si.theta_ref(), &[2.0]);
    }

    #[test]
    fn si_zero_omega_leaves_cumulative_unchanged() {
        let mut si = SiState::new(&[0.0], 1e-3).unwrap();
        si.accumulate_step(&[0.0], &[0.5]).unwrap();
        si.consolidate(&[0.5]).unwrap();
        assert_eq!(si.omega(), &[0.0]);
    }

    #[test]
    fn si_negative_omega_is_clamped() {
        // A loss-increasing trajectory: grad and delta share a sign.
        let mut si = SiState::new(&[0.0], 1e-3).unwrap();
        si.accumulate_step(&[1.0], &[0.5]).unwrap();
        assert!(si.omega_accum()[0] < 0.0);
        si.consolidate(&[0.5]).unwrap();
        assert_eq!(si.omega(), &[0.0]);
    }

    #[test]
    fn si_double_consolidation_is_a_noop() {
        let mut si = SiState::new(&[0.0], 1e-3).unwrap();
        si.accumulate_step(&[-1.0], &[0.1]).unwrap();
        si.consolidate(&[0.1]).unwrap();
        let omega = si.omega().to_vec();
        let theta_ref = si.theta_ref().to_vec();
        si.consolidate(&[5.0]).unwrap();
        assert_eq!(si.omega(), omega.as_slice());
        assert_eq!(si.theta_ref(), theta_ref.as_slice());
    }

    #[test]
    fn si_path_integral_tracks_loss_drop_on_quadratic() {
        // Gradient descent on L = theta^2 / 2; the accumulated path integral
        // approaches L(start) - L(end).
        let mut theta = 2.0_f64;
        let mut si = SiState::new(&[theta], 1e-3).unwrap();
        let lr = 1e-3;
        let l0 = 0.5 * theta * theta;
        for _ in 0..10_000 {
            let g = theta;
            let d = -lr * g;
            si.accumulate_step(&[g], &[d]).unwrap();
            theta += d;
        }
        let drop = l0 - 0.5 * theta * theta;
        let rel = (si.omega_accum()[0] - drop).abs() / drop;
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn mas_zero_gradients_change_nothing() {
        let mut mas = MasState::new(&[0.0, 0.0]);
        mas.accumulate_sample(&[0.0, 0.0]).unwrap();
        mas.consolidate(&[0.0, 0.0]).unwrap();
        assert_eq!(mas.omega(), &[0.0, 0.0]);
    }

    #[test]
    fn mas_hand_example_mean_absolute_gradient() {
        // F(x; theta) = theta * x, so dF/dtheta = x; inputs {1, -2, 3}
        // give mean |gradient| (1 + 2 + 3) / 3 = 2 exactly.
        let mut mas = MasState::new(&[0.7]);
        for x in [1.0, -2.0, 3.0] {
            mas.accumulate_sample(&[x]).unwrap();
        }
        mas.consolidate(&[0.7]).unwrap();
        assert_eq!(mas.omega(), &[2.0]);
    }

    #[test]
    fn mas_sums_double_with_identical_batches() {
        let mut mas = MasState::new(&[0.0]);
        mas.accumulate_sample(&[1.5]).unwrap();
        let after_one = mas.grad_norm_sum[0];
        mas.accumulate_sample(&[1.5]).unwrap();
        assert_eq!(mas.grad_norm_sum[0], 2.0 * after_one);
    }

    #[test]
    fn mas_empty_task_consolidation_is_fatal() {
        let mut mas = MasState::new(&[0.0]);
        assert!(mas.consolidate(&[0.0]).is_err());
    }

    #[test]
    fn mas_consolidation_resets_sums() {
        let mut mas = MasState::new(&[0.0]);
        mas.accumulate_sample(&[2.0]).unwrap();
        mas.consolidate(&[0.0]).unwrap();
        assert_eq!(mas.omega(), &[2.0]);
        assert_eq!(mas.sample_count(), 0);
        // a second consolidation has nothing to add
        assert!(mas.consolidate(&[0.0]).is_err());
        assert_eq!(mas.omega(), &[2.0]);
    }

    #[test]
    fn mas_order_invariance_within_task() {
        let mut a = MasState::new(&[0.0, 0.0]);
        let mut b = MasState::new(&[0.0, 0.0]);
        let samples = [[1.0, -0.5], [0.25, 2.0], [-3.0, 0.1]];
        for s in &samples {
            a.accumulate_sample(s).unwrap();
        }
        for s in samples.iter().rev() {
            b.accumulate_sample(s).unwrap();
        }
        a.consolidate(&[0.0, 0.0]).unwrap();
        b.consolidate(&[0.0, 0.0]).unwrap();
        assert_eq!(a.omega(), b.omega());
    }

    #[test]
    fn penalty_zero_at_reference_and_hand_case() {
        let p = quadratic_penalty(&[1.0, 3.0], &[0.5, -1.0], &[0.5, -1.0]);
        assert_eq!(p.value, 0.0);
        assert_eq!(p.grad, vec![0.0, 0.0]);

        // omega=1, ref=0, theta=2: value 4, d/dtheta = 4
        let p = quadratic_penalty(&[1.0], &[0.0], &[2.0]);
        assert_eq!(p.value, 4.0);
        assert_eq!(p.grad, vec![4.0]);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let n = 40;
        let omega: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let theta_ref: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = quadratic_penalty(&omega, &theta_ref, &theta);
        let h = 1e-3;
        for k in 0..n {
            let orig = theta[k];
            theta[k] = orig + h;
            let lp = quadratic_penalty(&omega, &theta_ref, &theta).value;
            theta[k] = orig - h;
            let lm = quadratic_penalty(&omega, &theta_ref, &theta).value;
            theta[k] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (p.grad[k] - numeric).abs() < 1e-8,
                "param {k}: analytic {} numeric {numeric}",
                p.grad[k]
            );
        }
    }

    #[test]
    fn importance_none_penalty_is_zero() {
        let state = ImportanceState::None;
        let p = state.penalty(&[1.0, 2.0, 3.0]);
        assert_eq!(p.value, 0.0);
        assert_eq!(p.grad, vec![0.0; 3]);
    }
}
