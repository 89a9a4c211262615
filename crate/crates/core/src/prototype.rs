//! Class-mean prototype store and the cosine nearest-class-mean rule.
//!
//! Means are stored un-normalized (raw arithmetic means of code vectors):
//! cosine classification ignores magnitude and the raw sums keep streaming
//! updates count-weighted.

use crate::error::{Error, Result};
use crate::losses::cosine_similarity;
use crate::matrix::Matrix;
use crate::net::Network;
use crate::ClassId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const NORM_FLOOR: f64 = 1e-12;

/// A class mean plus the number of samples that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMean {
    pub mean: Vec<f64>,
    pub count: u64,
}

/// Result of classifying one code vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub class_id: ClassId,
    /// Set when the query had a near-zero norm and the tie-break default
    /// (lowest class id) was returned.
    pub degenerate: bool,
}

/// Ordered map from class id to its mean code vector. This is the model's
/// entire per-class memory: one vector and one count per class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    means: BTreeMap<ClassId, Vec<f64>>,
    counts: BTreeMap<ClassId, u64>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.means.keys().copied()
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.means.contains_key(&class_id)
    }

    pub fn mean(&self, class_id: ClassId) -> Option<&[f64]> {
        self.means.get(&class_id).map(Vec::as_slice)
    }

    pub fn count(&self, class_id: ClassId) -> Option<u64> {
        self.counts.get(&class_id).copied()
    }

    /// Code dimension of the stored means, if any.
    pub fn code_dim(&self) -> Option<usize> {
        self.means.values().next().map(Vec::len)
    }

    /// Adds a new class mean. Rejects duplicate ids, inconsistent
    /// dimensions, zero counts, and degenerate (near-zero) means.
    pub fn insert_mean(&mut self, class_id: ClassId, mean: Vec<f64>, count: u64) -> Result<()> {
        if self.means.contains_key(&class_id) {
            return Err(Error::DuplicateClass(class_id));
        }
        if let Some(d) = self.code_dim() {
            if mean.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "prototype mean",
                    expected: d,
                    actual: mean.len(),
                });
            }
        }
        if count == 0 {
            return Err(Error::DegenerateInput(format!(
                "class {class_id} mean built from zero samples"
            )));
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            return Err(Error::DegenerateInput(format!(
                "class {class_id} has a zero-norm mean prototype"
            )));
        }
        self.means.insert(class_id, mean);
        self.counts.insert(class_id, count);
        Ok(())
    }

    /// Classifies one code by maximum cosine similarity to the stored
    /// means. Ties break toward the lowest class id; a near-zero query is
    /// flagged degenerate and maps to the lowest class id.
    pub fn predict(&self, code: &[f64]) -> Result<Prediction> {
        let first = *self.means.keys().next().ok_or(Error::EmptyStore)?;
        let norm = code.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            return Ok(Prediction {
                class_id: first,
                degenerate: true,
            });
        }
        let mut best = first;
        let mut best_sim = f64::NEG_INFINITY;
        for (&id, mean) in &self.means {
            let sim = cosine_similarity(code, mean);
            if sim > best_sim {
                best_sim = sim;
                best = id;
            }
        }
        Ok(Prediction {
            class_id: best,
            degenerate: false,
        })
    }

    /// Row-wise `predict`, order preserving.
    pub fn predict_batch(&self, codes: &Matrix) -> Result<Vec<ClassId>> {
        let mut out = Vec::with_capacity(codes.rows());
        for r in 0..codes.rows() {
            out.push(self.predict(codes.row(r))?.class_id);
        }
        Ok(out)
    }

    /// Replaces the means of already-stored classes (post-refinement base
    /// means). Every id must exist and dimensions must match.
    pub fn replace_means(&mut self, new_means: &BTreeMap<ClassId, ClassMean>) -> Result<()> {
        for (&id, cm) in new_means {
            let existing = self
                .means
                .get(&id)
                .ok_or(Error::MissingClassMean(id))?;
            if cm.mean.len() != existing.len() {
                return Err(Error::DimensionMismatch {
                    context: "replace_means",
                    expected: existing.len(),
                    actual: cm.mean.len(),
                });
            }
            if cm.count == 0 {
                return Err(Error::DegenerateInput(format!(
                    "replacement mean for class {id} built from zero samples"
                )));
            }
            let norm = cm.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < NORM_FLOOR {
                return Err(Error::DegenerateInput(format!(
                    "replacement mean for class {id} has zero norm"
                )));
            }
        }
        for (&id, cm) in new_means {
            self.means.insert(id, cm.mean.clone());
            self.counts.insert(id, cm.count);
        }
        Ok(())
    }
}

/// Streams the task's data through the encoder in mini-batches and appends
/// one arithmetic-mean prototype per observed class. Existing classes are
/// untouched; a label that is already stored is an error. Returns the ids
/// added, in ascending order.
pub fn compute_class_means(
    net: &Network,
    features: &Matrix,
    labels: &[ClassId],
    batch_size: usize,
    store: &mut PrototypeStore,
) -> Result<Vec<ClassId>> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "compute_class_means labels",
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    if features.rows() == 0 {
        return Err(Error::DegenerateInput(
            "class mean computation over an empty dataset".into(),
        ));
    }
    let batch_size = batch_size.max(1);
    let mut sums: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<ClassId, u64> = BTreeMap::new();
    let mut row = 0;
    while row < features.rows() {
        let end = (row + batch_size).min(features.rows());
        let mut chunk = Matrix::zeros(end - row, features.cols());
        for (i, r) in (row..end).enumerate() {
            chunk.row_mut(i).copy_from_slice(features.row(r));
        }
        let codes = net.forward_encode(&chunk)?;
        for (i, r) in (row..end).enumerate() {
            let label = labels[r];
            let sum = sums
                .entry(label)
                .or_insert_with(|| vec![0.0; codes.cols()]);
            for (s, c) in sum.iter_mut().zip(codes.row(i)) {
                *s += c;
            }
            *counts.entry(label).or_insert(0) += 1;
        }
        row = end;
    }
    let mut added = Vec::with_capacity(sums.len());
    for (id, mut sum) in sums {
        let count = counts[&id];
        for s in &mut sum {
            *s /= count as f64;
        }
        store.insert_mean(id, sum, count)?;
        added.push(id);
    }
    Ok(added)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_two() -> PrototypeStore {
        let mut s = PrototypeStore::new();
        s.insert_mean(0, vec![1.0, 0.0], 1).unwrap();
        s.insert_mean(1, vec![0.0, 1.0], 1).unwrap();
        s
    }

    #[test]
    fn predict_picks_most_similar_mean() {
        let s = store_two();
        let p = s.predict(&[0.9, 0.1]).unwrap();
        assert_eq!(p.class_id, 0);
        assert!(!p.degenerate);
        assert_eq!(s.predict(&[0.0, 1.0]).unwrap().class_id, 1);
    }

    #[test]
    fn predict_is_scale_invariant() {
        let s = store_two();
        let a = s.predict(&[0.6, 0.4]).unwrap().class_id;
        let b = s.predict(&[6000.0, 4000.0]).unwrap().class_id;
        assert_eq!(a, b);
    }

    #[test]
    fn predict_empty_store_is_an_error() {
        let s = PrototypeStore::new();
        assert!(matches!(s.predict(&[1.0]), Err(Error::EmptyStore)));
    }

    #[test]
    fn predict_zero_code_flags_degenerate() {
        let s = store_two();
        let p = s.predict(&[0.0, 0.0]).unwrap();
        assert_eq!(p.class_id, 0);
        assert!(p.degenerate);
    }

    #[test]
    fn exact_tie_breaks_to_lowest_class_id() {
        let mut s = PrototypeStore::new();
        s.insert_mean(3, vec![1.0, 0.0], 1).unwrap();
        s.insert_mean(7, vec![1.0, 0.0], 1).unwrap();
        assert_eq!(s.predict(&[0.5, 0.5]).unwrap().class_id, 3);

        // distinct means, equal similarity to the query
        let mut s = PrototypeStore::new();
        s.insert_mean(2, vec![1.0, 0.0], 1).unwrap();
        s.insert_mean(5, vec![0.0, 1.0], 1).unwrap();
        assert_eq!(s.predict(&[1.0, 1.0]).unwrap().class_id, 2);
    }

    #[test]
    fn insertion_order_does_not_affect_predictions() {
        let mut a = PrototypeStore::new();
        a.insert_mean(0, vec![1.0, 0.0], 1).unwrap();
        a.insert_mean(1, vec![0.0, 1.0], 1).unwrap();
        let mut b = PrototypeStore::new();
        b.insert_mean(1, vec![0.0, 1.0], 1).unwrap();
        b.insert_mean(0, vec![1.0, 0.0], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert_eq!(
                a.predict(&q).unwrap().class_id,
                b.predict(&q).unwrap().class_id
            );
        }
    }

    #[test]
    fn predict_batch_matches_row_loop() {
        let s = store_two();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let m = Matrix::from_rows(&rows);
        let batch = s.predict_batch(&m).unwrap();
        for (r, want) in rows.iter().zip(&batch) {
            assert_eq!(s.predict(r).unwrap().class_id, *want);
        }
        // single-row batch equals predict
        let one = Matrix::from_rows(&[rows[0].clone()]);
        assert_eq!(s.predict_batch(&one).unwrap()[0], batch[0]);
    }

    #[test]
    fn duplicate_class_and_dimension_mismatch_are_rejected() {
        let mut s = store_two();
        assert!(matches!(
            s.insert_mean(0, vec![1.0, 1.0], 1),
            Err(Error::DuplicateClass(0))
        ));
        assert!(s.insert_mean(2, vec![1.0, 1.0, 1.0], 1).is_err());
        assert!(s.insert_mean(2, vec![0.0, 0.0], 1).is_err());
    }

    #[test]
    fn replace_means_identical_is_identity() {
        let mut s = store_two();
        let mut repl = BTreeMap::new();
        repl.insert(
            0,
            ClassMean {
                mean: vec![1.0, 0.0],
                count: 1,
            },
        );
        let before = s.clone();
        s.replace_means(&repl).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn replace_means_moves_only_named_classes() {
        let mut s = store_two();
        let mut repl = BTreeMap::new();
        repl.insert(
            1,
            ClassMean {
                mean: vec![1.0, 1.0],
                count: 4,
            },
        );
        s.replace_means(&repl).unwrap();
        assert_eq!(s.mean(0).unwrap(), &[1.0, 0.0]);
        assert_eq!(s.mean(1).unwrap(), &[1.0, 1.0]);
        assert_eq!(s.count(1), Some(4));
    }

    #[test]
    fn replace_means_unknown_class_is_an_error() {
        let mut s = store_two();
        let mut repl = BTreeMap::new();
        repl.insert(
            9,
            ClassMean {
                mean: vec![1.0, 0.0],
                count: 1,
            },
        );
        assert!(matches!(
            s.replace_means(&repl),
            Err(Error::MissingClassMean(9))
        ));
    }

    #[test]
    fn class_means_one_sample_per_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = crate::net::Network::new(4, &[2], &mut rng).unwrap();
        let features = Matrix::from_rows(&[vec![0.5, 0.2, -0.1, 0.9], vec![1.0, -0.4, 0.3, 0.0]]);
        let labels = [0u32, 1];
        let mut store = PrototypeStore::new();
        let added = compute_class_means(&net, &features, &labels, 8, &mut store).unwrap();
        assert_eq!(added, vec![0, 1]);
        let codes = net.forward_encode(&features).unwrap();
        assert_eq!(store.mean(0).unwrap(), codes.row(0));
        assert_eq!(store.mean(1).unwrap(), codes.row(1));
    }

    #[test]
    fn class_mean_is_arithmetic_mean() {
        // identity encoder so codes equal inputs
        let enc = vec![crate::net::LayerParams::new(
            {
                let mut w = Matrix::zeros(2, 2);
                w.row_mut(0)[0] = 1.0;
                w.row_mut(1)[1] = 1.0;
                w
            },
            vec![0.0; 2],
            crate::net::Activation::Elu,
        )
        .unwrap()];
        let dec = vec![crate::net::LayerParams::new(
            {
                let mut w = Matrix::zeros(2, 2);
                w.row_mut(0)[0] = 1.0;
                w.row_mut(1)[1] = 1.0;
                w
            },
            vec![0.0; 2],
            crate::net::Activation::Linear,
        )
        .unwrap()];
        let net = crate::net::Network::from_layers(enc, dec).unwrap();
        let features = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut store = PrototypeStore::new();
        compute_class_means(&net, &features, &[0, 0], 8, &mut store).unwrap();
        assert_eq!(store.mean(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(store.count(0), Some(2));
    }

    #[test]
    fn streaming_mean_matches_one_shot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let net = crate::net::Network::new(6, &[3], &mut rng).unwrap();
        let n = 57; // deliberately not a multiple of the batch size
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<ClassId> = (0..n).map(|i| (i % 3) as ClassId).collect();
        let features = Matrix::from_rows(&rows);

        let mut store = PrototypeStore::new();
        compute_class_means(&net, &features, &labels, 8, &mut store).unwrap();

        // one-shot oracle: single full-dataset pass
        let codes = net.forward_encode(&features).unwrap();
        for class in 0..3u32 {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            let mut mean = vec![0.0; codes.cols()];
            for &i in &members {
                for (m, c) in mean.iter_mut().zip(codes.row(i)) {
                    *m += c;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            let stored = store.mean(class).unwrap();
            for (a, b) in stored.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recomputing_existing_class_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let net = crate::net::Network::new(4, &[2], &mut rng).unwrap();
        let features = Matrix::from_rows(&[vec![0.5, 0.2, -0.1, 0.9]]);
        let mut store = PrototypeStore::new();
        compute_class_means(&net, &features, &[0], 8, &mut store).unwrap();
        assert!(matches!(
            compute_class_means(&net, &features, &[0], 8, &mut store),
            Err(Error::DuplicateClass(0))
        ));
    }
}
