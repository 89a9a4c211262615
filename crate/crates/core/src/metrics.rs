//! Session accuracies and the psi continual-learning metrics.

use crate::error::{Error, Result};
use crate::ClassId;
use serde::{Deserialize, Serialize};

/// Accuracies measured after one incremental session (sessions are numbered
/// 2..=T; session 1 is base training and is not evaluated separately).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_index: usize,
    pub alpha_base: f64,
    pub alpha_new: f64,
    pub alpha_all: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Offline joint-training accuracy; the normalizer for psi_base/psi_all.
    pub alpha_ideal: f64,
    /// Total number of tasks including the base task.
    pub total_tasks: usize,
}

impl EvalConfig {
    pub fn new(alpha_ideal: f64, total_tasks: usize) -> Result<Self> {
        if !(alpha_ideal > 0.0 && alpha_ideal <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_ideal must be in (0, 1], got {alpha_ideal}"
            )));
        }
        if total_tasks < 2 {
            return Err(Error::InvalidConfig(
                "at least two tasks are needed to evaluate".into(),
            ));
        }
        Ok(Self {
            alpha_ideal,
            total_tasks,
        })
    }
}

/// Fraction of predictions equal to their label.
pub fn accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy inputs",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::DegenerateInput(
            "accuracy over an empty set".into(),
        ));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSummary {
    pub psi_base: f64,
    pub psi_new: f64,
    pub psi_all: f64,
}

/// psi_base = mean(alpha_base_i / alpha_ideal), psi_new = mean(alpha_new_i),
/// psi_all = mean(alpha_all_i / alpha_ideal), averaging over sessions
/// i = 2..=T. Records must cover exactly that range.
pub fn psi_metrics(records: &[SessionRecord], cfg: &EvalConfig) -> Result<PsiSummary> {
    let mut seen = vec![false; cfg.total_tasks + 1];
    for r in records {
        if r.session_index < 2 || r.session_index > cfg.total_tasks || seen[r.session_index] {
            return Err(Error::InvalidConfig(format!(
                "unexpected or duplicate session index {}",
                r.session_index
            )));
        }
        seen[r.session_index] = true;
    }
    let missing: Vec<usize> = (2..=cfg.total_tasks).filter(|&i| !seen[i]).collect();
    if !missing.is_empty() {
        return Err(Error::MissingSessions(missing));
    }
    let n = (cfg.total_tasks - 1) as f64;
    let mut psi_base = 0.0;
    let mut psi_new = 0.0;
    let mut psi_all = 0.0;
    for r in records {
        psi_base += r.alpha_base / cfg.alpha_ideal;
        psi_new += r.alpha_new;
        psi_all += r.alpha_all / cfg.alpha_ideal;
    }
    Ok(PsiSummary {
        psi_base: psi_base / n,
        psi_new: psi_new / n,
        psi_all: psi_all / n,
    })
}
