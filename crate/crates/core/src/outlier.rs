//! Local Outlier Factor in cosine-distance space.
//!
//! Used once, after base training, to drop outlier prototypes before the
//! base-class means are recomputed. Neighborhoods are exact (full pairwise
//! distances); per-class point counts at desk scale do not justify an index
//! structure.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prototype::ClassMean;
use crate::ClassId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Density floor applied to mean reachability before inversion, so duplicate
/// directions (zero cosine distance) cannot divide by zero.
const REACH_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LofConfig {
    pub k_neighbors: usize,
    /// Scores above this mark a point as an outlier.
    pub threshold: f64,
}

impl Default for LofConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 20,
            threshold: 1.5,
        }
    }
}

impl LofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors < 1 {
            return Err(Error::InvalidConfig("LOF k_neighbors must be >= 1".into()));
        }
        if !(self.threshold > 1.0) {
            return Err(Error::InvalidConfig("LOF threshold must be > 1".into()));
        }
        Ok(())
    }
}

/// Cosine distance 1 - cos(u, v), clamped to [0, 2].
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    (1.0 - crate::losses::cosine_similarity(u, v)).clamp(0.0, 2.0)
}

/// Classic LOF scores with cosine distance: k-distance, reachability
/// distance reach_k(a, b) = max(k-dist(b), d(a, b)), local reachability
/// density lrd(a) = 1 / mean reach over a's k nearest neighbors, and
/// LOF(a) = mean over those neighbors b of lrd(b) / lrd(a). Neighbor ties
/// break by index.
pub fn lof_scores(points: &Matrix, cfg: &LofConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = points.rows();
    let k = cfg.k_neighbors;
    if n <= k {
        return Err(Error::InvalidConfig(format!(
            "LOF needs more points ({n}) than neighbors (k = {k})"
        )));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(points.row(i), points.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // k nearest neighbors of each point (excluding itself) and its k-distance
    let mut neighbors = Vec::with_capacity(n);
    let mut k_dist = vec![0.0; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist[i * n + a]
                .partial_cmp(&dist[i * n + b])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(k);
        k_dist[i] = dist[i * n + order[k - 1]];
        neighbors.push(order);
    }

    let mut lrd = vec![0.0; n];
    for i in 0..n {
        let mut reach_sum = 0.0;
        for &b in &neighbors[i] {
            reach_sum += k_dist[b].max(dist[i * n + b]);
        }
        lrd[i] = 1.0 / (reach_sum / k as f64).max(REACH_FLOOR);
    }

    let mut scores = vec![0.0; n];
    for i in 0..n {
        let ratio_sum: f64 = neighbors[i].iter().map(|&b| lrd[b] / lrd[i]).sum();
        scores[i] = ratio_sum / k as f64;
    }
    Ok(scores)
}

/// Per class: drops points whose LOF exceeds the threshold and returns the
/// mean of the survivors. Classes too small to score keep their unfiltered
/// mean, as does a class where every point would be dropped.
pub fn exclude_and_mean(
    points_by_class: &BTreeMap<ClassId, Matrix>,
    cfg: &LofConfig,
) -> Result<BTreeMap<ClassId, ClassMean>> {
    cfg.validate()?;
    let mut out = BTreeMap::new();
    for (&class_id, points) in points_by_class {
        let n = points.rows();
        if n == 0 {
            return Err(Error::DegenerateInput(format!(
                "class {class_id} has no prototypes to filter"
            )));
        }
        let keep: Vec<usize> = if n <= cfg.k_neighbors {
            log::info!(
                "class {class_id}: {n} points <= k = {}, skipping LOF filtering",
                cfg.k_neighbors
            );
            (0..n).collect()
        } else {
            let scores = lof_scores(points, cfg)?;
            let kept: Vec<usize> = (0..n).filter(|&i| scores[i] <= cfg.threshold).collect();
            if kept.is_empty() {
                log::warn!(
                    "class {class_id}: every point exceeded the LOF threshold; keeping all"
                );
                (0..n).collect()
            } else {
                kept
            }
        };
        let mut mean = vec![0.0; points.cols()];
        for &i in &keep {
            for (m, v) in mean.iter_mut().zip(points.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= keep.len() as f64;
        }
        out.insert(
            class_id,
            ClassMean {
                mean,
                count: keep.len() as u64,
            },
        );
    }
    Ok(out)
}
