//! Finite-difference verification suite covering every loss term and
//! composite, individually and combined, on seeded random autoencoders.
//! Shared by the `gradcheck` CLI subcommand and the acceptance tests.

use crate::error::Result;
use crate::importance::{MasState, SiState};
use crate::losses::{
    loss_add, loss_base, loss_inc, sample_pairs, Batch, LossWeights, RegPenalty,
};
use crate::matrix::Matrix;
use crate::net::{finite_diff_check, GradCheckReport, Network};
use crate::prototype::PrototypeStore;
use crate::ClassId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct NamedCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn weights_only(mse: f64, cos: f64, l1: f64, reg: f64, center: f64) -> LossWeights {
    LossWeights {
        lambda_mse: mse,
        lambda_cos: cos,
        lambda_l1: l1,
        lambda_reg: reg,
        lambda_center: center,
    }
}

fn random_batch<R: Rng + ?Sized>(input_dim: usize, n: usize, rng: &mut R) -> Batch {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels: Vec<ClassId> = (0..n).map(|i| (i % 3) as ClassId).collect();
    let pairs = sample_pairs(&labels, n, rng);
    Batch::new(Matrix::from_rows(&rows), labels, pairs).unwrap()
}

fn random_store<R: Rng + ?Sized>(code_dim: usize, classes: u32, rng: &mut R) -> PrototypeStore {
    let mut store = PrototypeStore::new();
    for c in 0..classes {
        let mean: Vec<f64> = (0..code_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert_mean(c, mean, 1).unwrap();
    }
    store
}

/// Runs the whole gradient-check suite at the given tolerance and step.
pub fn run_gradient_check_suite(seed: u64, tol: f64, step: f64) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = 10;
    let mut net = Network::new(input_dim, &[5, 4], &mut rng)?;
    let batch = random_batch(input_dim, 8, &mut rng);
    let store = random_store(net.code_dim(), 3, &mut rng);

    // Importance states with random cumulative omega and a reference away
    // from the current parameters, so the penalty gradient is nonzero.
    let theta = net.flatten_params();
    let mut si = SiState::new(&theta, 1e-3)?;
    let mut mas = MasState::new(&theta);
    {
        let n = theta.len();
        let fake_grads: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fake_delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        si.accumulate_step(&fake_grads, &fake_delta)?;
        let shifted: Vec<f64> = theta.iter().map(|t| t + 0.3).collect();
        si.consolidate(&shifted)?;
        for _ in 0..4 {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            mas.accumulate_sample(&g)?;
        }
        mas.consolidate(&shifted)?;
    }

    let mut checks: Vec<NamedCheck> = Vec::new();
    let mut check_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4744_4348);

    type LossClosure<'a> =
        Box<dyn Fn(&Network) -> Result<(f64, crate::net::GradientBuffer)> + 'a>;
    let cases: Vec<(&'static str, LossClosure)> = vec![
        (
            "mse",
            Box::new(|net: &Network| loss_base(net, &batch, &weights_only(1.0, 0.0, 0.0, 0.0, 0.0))),
        ),
        (
            "cosine_embedding",
            Box::new(|net: &Network| loss_base(net, &batch, &weights_only(0.0, 1.0, 0.0, 0.0, 0.0))),
        ),
        (
            "l1_sparsity",
            Box::new(|net: &Network| loss_base(net, &batch, &weights_only(0.0, 0.0, 1.0, 0.0, 0.0))),
        ),
        (
            "center",
            Box::new(|net: &Network| {
                loss_add(net, &batch, &weights_only(0.0, 0.0, 0.0, 0.0, 1.0), &store)
            }),
        ),
        (
            "si_penalty",
            Box::new(|net: &Network| {
                let reg = si.penalty(&net.flatten_params());
                loss_inc(net, &batch, &weights_only(0.0, 0.0, 0.0, 1.0, 0.0), &reg)
            }),
        ),
        (
            "mas_penalty",
            Box::new(|net: &Network| {
                let reg = mas.penalty(&net.flatten_params());
                loss_inc(net, &batch, &weights_only(0.0, 0.0, 0.0, 1.0, 0.0), &reg)
            }),
        ),
        (
            "base_composite",
            Box::new(|net: &Network| loss_base(net, &batch, &LossWeights::default())),
        ),
        (
            "additional_composite",
            Box::new(|net: &Network| loss_add(net, &batch, &LossWeights::default(), &store)),
        ),
        (
            "incremental_composite_si",
            Box::new(|net: &Network| {
                let reg = si.penalty(&net.flatten_params());
                loss_inc(net, &batch, &LossWeights::default(), &reg)
            }),
        ),
        (
            "incremental_composite_mas",
            Box::new(|net: &Network| {
                let reg = mas.penalty(&net.flatten_params());
                loss_inc(net, &batch, &LossWeights::default(), &reg)
            }),
        ),
        (
            "incremental_no_reg_matches_base",
            Box::new(|net: &Network| {
                let reg = RegPenalty::zero(net.param_count());
                loss_inc(
                    net,
                    &batch,
                    &LossWeights {
                        lambda_reg: 0.0,
                        ..LossWeights::default()
                    },
                    &reg,
                )
            }),
        ),
    ];

    for (name, loss_fn) in cases {
        let report = finite_diff_check(&mut net, loss_fn.as_ref(), tol, step, &mut check_rng)?;
        checks.push(NamedCheck { name, report });
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_spec_tolerance() {
        let checks = run_gradient_check_suite(17, 1e-4, 1e-5).unwrap();
        assert!(checks.len() >= 9);
        for c in &checks {
            assert!(
                c.report.passed,
                "{}: max rel error {} at param {}",
                c.name, c.report.max_rel_error, c.report.worst_param
            );
        }
    }
}
