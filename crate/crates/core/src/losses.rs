//! Loss terms and their weighted composites.
//!
//! Every term reduces by MEAN over the batch (and over pairs for the cosine
//! embedding loss) so the lambda weights stay batch-size independent. The
//! composite functions return the scalar loss together with exact parameter
//! gradients obtained by backpropagating the code/reconstruction gradients
//! through the network.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{GradientBuffer, Network};
use crate::prototype::PrototypeStore;
use crate::ClassId;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Norms below this are treated as degenerate in cosine computations.
const NORM_FLOOR: f64 = 1e-12;

/// Weights of the composite losses. All must be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mse: f64,
    pub lambda_cos: f64,
    pub lambda_l1: f64,
    pub lambda_reg: f64,
    pub lambda_center: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_cos: 10.0,
            lambda_l1: 1e-3,
            lambda_reg: 10.0,
            lambda_center: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_mse,
            self.lambda_cos,
            self.lambda_l1,
            self.lambda_reg,
            self.lambda_center,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidConfig(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled pair of batch rows for the cosine embedding loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub index_a: usize,
    pub index_b: usize,
    pub same_class: bool,
}

/// A training mini-batch: inputs, labels, and the pairs sampled for it.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<ClassId>,
    pub pairs: Vec<PairSample>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<ClassId>, pairs: Vec<PairSample>) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::DimensionMismatch {
                context: "batch labels",
                expected: inputs.rows(),
                actual: labels.len(),
            });
        }
        let n = inputs.rows();
        for p in &pairs {
            if p.index_a == p.index_b || p.index_a >= n || p.index_b >= n {
                return Err(Error::DegenerateInput(format!(
                    "invalid pair ({}, {}) for batch of {}",
                    p.index_a, p.index_b, n
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Cosine similarity clamped to [-1, 1]. Norms below 1e-12 are degenerate
/// and yield 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        log::debug!("cosine similarity on near-zero vector; returning 0");
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Per-sample squared reconstruction error, averaged over the batch.
pub fn loss_mse(recon: &Matrix, target: &Matrix) -> Result<f64> {
    Ok(loss_mse_with_grad(recon, target)?.0)
}

/// MSE value plus dL/d(recon).
pub fn loss_mse_with_grad(recon: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if recon.rows() != target.rows() || recon.cols() != target.cols() {
        return Err(Error::DimensionMismatch {
            context: "loss_mse shapes",
            expected: target.cols(),
            actual: recon.cols(),
        });
    }
    let n = recon.rows() as f64;
    let mut grad = Matrix::zeros(recon.rows(), recon.cols());
    let mut total = 0.0;
    for r in 0..recon.rows() {
        let g = grad.row_mut(r);
        for ((rv, tv), gv) in recon.row(r).iter().zip(target.row(r)).zip(g.iter_mut()) {
            let d = rv - tv;
            total += d * d;
            *gv = 2.0 * d / n;
        }
    }
    Ok((total / n, grad))
}

/// Cosine embedding loss over sampled pairs of code vectors: same-class pairs
/// contribute 1 - cos, different-class pairs max(0, cos). Mean over pairs.
pub fn loss_cos(codes: &Matrix, labels: &[ClassId], pairs: &[PairSample]) -> f64 {
    let _ = labels;
    loss_cos_with_grad(codes, pairs).0
}

/// Cosine embedding loss plus dL/d(codes). Pairs with a near-zero-norm side
/// contribute similarity 0 and no gradient.
pub fn loss_cos_with_grad(codes: &Matrix, pairs: &[PairSample]) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(codes.rows(), codes.cols());
    if pairs.is_empty() {
        log::debug!("cosine embedding loss called with an empty pair list");
        return (0.0, grad);
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    for p in pairs {
        let u = codes.row(p.index_a);
        let v = codes.row(p.index_b);
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu < NORM_FLOOR || nv < NORM_FLOOR {
            // similarity 0: same-class pairs add 1, different-class add 0;
            // no gradient flows through a degenerate pair
            if p.same_class {
                total += 1.0;
            }
            continue;
        }
        let dot = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
        // d cos / du = v / (|u||v|) - cos * u / |u|^2, symmetric in v.
        let coeff = if p.same_class {
            total += 1.0 - cos;
            -inv
        } else if cos > 0.0 {
            total += cos;
            inv
        } else {
            continue;
        };
        {
            let gu = grad.row_mut(p.index_a);
            for i in 0..gu.len() {
                gu[i] += coeff * (v[i] / (nu * nv) - cos * u[i] / (nu * nu));
            }
        }
        {
            let gv = grad.row_mut(p.index_b);
            for i in 0..gv.len() {
                gv[i] += coeff * (u[i] / (nu * nv) - cos * v[i] / (nv * nv));
            }
        }
    }
    (total * inv, grad)
}

/// Uniformly samples `count` unordered pairs of distinct batch indices (with
/// replacement across pairs) and tags each with the same-class flag. Batches
/// smaller than two yield an empty list.
pub fn sample_pairs<R: Rng + ?Sized>(
    labels: &[ClassId],
    count: usize,
    rng: &mut R,
) -> Vec<PairSample> {
    let n = labels.len();
    if n < 2 {
        return Vec::new();
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(PairSample {
            index_a: a,
            index_b: b,
            same_class: labels[a] == labels[b],
        });
    }
    pairs
}

/// L1 sparsity penalty on codes, mean over the batch.
pub fn loss_l1(codes: &Matrix) -> f64 {
    loss_l1_with_grad(codes).0
}

pub fn loss_l1_with_grad(codes: &Matrix) -> (f64, Matrix) {
    let n = codes.rows().max(1) as f64;
    let mut grad = Matrix::zeros(codes.rows(), codes.cols());
    let mut total = 0.0;
    for r in 0..codes.rows() {
        let g = grad.row_mut(r);
        for (c, gv) in codes.row(r).iter().zip(g.iter_mut()) {
            total += c.abs();
            *gv = if *c > 0.0 {
                1.0 / n
            } else if *c < 0.0 {
                -1.0 / n
            } else {
                0.0
            };
        }
    }
    (total / n, grad)
}

/// Squared distance from each code to its own class mean, mean over the batch.
pub fn loss_center(codes: &Matrix, labels: &[ClassId], means: &PrototypeStore) -> Result<f64> {
    Ok(loss_center_with_grad(codes, labels, means)?.0)
}

pub fn loss_center_with_grad(
    codes: &Matrix,
    labels: &[ClassId],
    means: &PrototypeStore,
) -> Result<(f64, Matrix)> {
    if labels.len() != codes.rows() {
        return Err(Error::DimensionMismatch {
            context: "loss_center labels",
            expected: codes.rows(),
            actual: labels.len(),
        });
    }
    let n = codes.rows() as f64;
    let mut grad = Matrix::zeros(codes.rows(), codes.cols());
    let mut total = 0.0;
    for r in 0..codes.rows() {
        let mean = means
            .mean(labels[r])
            .ok_or(Error::MissingClassMean(labels[r]))?;
        let g = grad.row_mut(r);
        for ((c, m), gv) in codes.row(r).iter().zip(mean).zip(g.iter_mut()) {
            let d = c - m;
            total += d * d;
            *gv = 2.0 * d / n;
        }
    }
    Ok((total / n, grad))
}

/// Base-training loss: lambda_mse * MSE + lambda_cos * cosine embedding +
/// lambda_l1 * L1, with exact gradients for encoder and decoder.
pub fn loss_base(net: &Network, batch: &Batch, w: &LossWeights) -> Result<(f64, GradientBuffer)> {
    let cache = net.forward_cached(&batch.inputs, true)?;
    let codes = cache.codes();
    let recon = cache.reconstruction().unwrap();

    let (mse, mut d_recon) = loss_mse_with_grad(recon, &batch.inputs)?;
    let (cos, d_cos) = loss_cos_with_grad(codes, &batch.pairs);
    let (l1, d_l1) = loss_l1_with_grad(codes);

    let total = w.lambda_mse * mse + w.lambda_cos * cos + w.lambda_l1 * l1;

    d_recon.scale(w.lambda_mse);
    let mut d_codes = Matrix::zeros(codes.rows(), codes.cols());
    d_codes.add_scaled(&d_cos, w.lambda_cos);
    d_codes.add_scaled(&d_l1, w.lambda_l1);

    let grads = net.backward(&cache, Some(&d_codes), Some(&d_recon))?;
    Ok((total, grads))
}

/// Additional-training loss: lambda_center * center + lambda_cos * cosine
/// embedding. Gradients flow into the encoder only.
pub fn loss_add(
    net: &Network,
    batch: &Batch,
    w: &LossWeights,
    means: &PrototypeStore,
) -> Result<(f64, GradientBuffer)> {
    let cache = net.forward_cached(&batch.inputs, false)?;
    let codes = cache.codes();

    let (center, d_center) = loss_center_with_grad(codes, &batch.labels, means)?;
    let (cos, d_cos) = loss_cos_with_grad(codes, &batch.pairs);

    let total = w.lambda_center * center + w.lambda_cos * cos;

    let mut d_codes = Matrix::zeros(codes.rows(), codes.cols());
    d_codes.add_scaled(&d_center, w.lambda_center);
    d_codes.add_scaled(&d_cos, w.lambda_cos);

    let grads = net.backward(&cache, Some(&d_codes), None)?;
    Ok((total, grads))
}

/// A drift-penalty evaluation: scalar value and flat per-parameter gradient
/// in the network's flat layout.
#[derive(Debug, Clone)]
pub struct RegPenalty {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl RegPenalty {
    pub fn zero(param_count: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; param_count],
        }
    }
}

/// Incremental-training loss: the base terms plus lambda_reg times the
/// supplied importance penalty.
pub fn loss_inc(
    net: &Network,
    batch: &Batch,
    w: &LossWeights,
    reg: &RegPenalty,
) -> Result<(f64, GradientBuffer)> {
    let (base, mut grads) = loss_base(net, batch, w)?;
    if w.lambda_reg == 0.0 {
        return Ok((base, grads));
    }
    let total = base + w.lambda_reg * reg.value;
    grads.add_flat_scaled(&reg.grad, w.lambda_reg);
    Ok((total, grads))
}
