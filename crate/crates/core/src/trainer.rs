//! Orchestration of base training, LOF refinement with additional training,
//! and incremental training over a task stream.
//!
//! Base training updates the whole autoencoder; the additional phase and
//! every incremental task update only the encoder (the flat-parameter
//! encoder prefix), which keeps the decoder bit-identical across incremental
//! sessions. Each phase gets a fresh optimizer; importance accumulation runs
//! across phases within a task and consolidates exactly once at the task
//! boundary.

use crate::data::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::importance::{ImportanceState, MasState, SiState};
use crate::losses::{loss_add, loss_base, loss_inc, sample_pairs, Batch, LossWeights};
use crate::matrix::Matrix;
use crate::metrics::{psi_metrics, EvalConfig, PsiSummary, SessionRecord};
use crate::net::Network;
use crate::optim::AmsGrad;
use crate::outlier::{exclude_and_mean, LofConfig};
use crate::prototype::{compute_class_means, PrototypeStore};
use crate::ClassId;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// One task in the stream: a disjoint class set plus the indices of its
/// training samples in the backing dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// 1-based task number; task 1 is the base task.
    pub index: usize,
    pub classes: Vec<ClassId>,
    pub train_indices: Vec<usize>,
}

/// Ordered, class-disjoint partition of a dataset into a base task and
/// incremental tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub base_class_count: usize,
}

impl TaskStream {
    pub fn new(tasks: Vec<Task>, base_class_count: usize) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::TaskStream(
                "a stream needs a base task and at least one incremental task".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, task) in tasks.iter().enumerate() {
            if task.index != i + 1 {
                return Err(Error::TaskStream(format!(
                    "task indices must be contiguous from 1; found {} at position {i}",
                    task.index
                )));
            }
            if task.classes.is_empty() {
                return Err(Error::TaskStream(format!("task {} has no classes", task.index)));
            }
            for &c in &task.classes {
                if !seen.insert(c) {
                    return Err(Error::TaskStream(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
        }
        if tasks[0].classes.len() != base_class_count {
            return Err(Error::TaskStream(format!(
                "base task holds {} classes but base_class_count is {base_class_count}",
                tasks[0].classes.len()
            )));
        }
        Ok(Self {
            tasks,
            base_class_count,
        })
    }

    pub fn total_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Learning-rate schedule for one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Fixed { value: f64 },
    StepDecay {
        initial: f64,
        factor: f64,
        period_epochs: usize,
    },
}

impl LrSchedule {
    pub fn fixed(value: f64) -> Self {
        LrSchedule::Fixed { value }
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Fixed { value } => value,
            LrSchedule::StepDecay {
                initial,
                factor,
                period_epochs,
            } => initial * factor.powi((epoch / period_epochs.max(1)) as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Fixed { value } => value > 0.0 && value.is_finite(),
            LrSchedule::StepDecay {
                initial,
                factor,
                period_epochs,
            } => initial > 0.0 && factor > 0.0 && period_epochs >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid learning-rate schedule".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    Si,
    Mas,
    None,
}

/// Training configuration shared by all phases of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_base: usize,
    pub epochs_add: usize,
    pub epochs_inc: usize,
    pub lr_base: LrSchedule,
    pub lr_add: LrSchedule,
    pub lr_inc: LrSchedule,
    pub weights: LossWeights,
    pub regularizer: RegularizerKind,
    /// SI damping added to the squared drift at consolidation.
    pub si_xi: f64,
    /// Use the cheaper per-batch MAS surrogate instead of the per-sample
    /// gradient pass at consolidation.
    pub mas_per_batch_approx: bool,
    pub use_lof: bool,
    pub lof: LofConfig,
    /// Encoder layer widths. Empty selects [D/4, D/4] for input dimension D.
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs_base: 30,
            epochs_add: 10,
            epochs_inc: 15,
            lr_base: LrSchedule::fixed(1e-3),
            lr_add: LrSchedule::fixed(1e-3),
            lr_inc: LrSchedule::fixed(1e-3),
            weights: LossWeights::default(),
            regularizer: RegularizerKind::Si,
            si_xi: 1e-3,
            mas_per_batch_approx: false,
            use_lof: false,
            lof: LofConfig::default(),
            hidden_dims: Vec::new(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch size must be at least 2 (pair sampling needs two rows)".into(),
            ));
        }
        self.weights.validate()?;
        self.lr_base.validate()?;
        self.lr_add.validate()?;
        self.lr_inc.validate()?;
        if !(self.si_xi > 0.0) {
            return Err(Error::InvalidConfig("si_xi must be > 0".into()));
        }
        if self.use_lof {
            self.lof.validate()?;
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden dims must be nonzero".into()));
        }
        Ok(())
    }

    /// Encoder widths to build, defaulting to two layers of D/4.
    pub fn resolved_hidden_dims(&self, input_dim: usize) -> Vec<usize> {
        if self.hidden_dims.is_empty() {
            let h = (input_dim / 4).max(2);
            vec![h, h]
        } else {
            self.hidden_dims.clone()
        }
    }
}

/// Seeded RNG streams partitioned by purpose so toggling one feature does
/// not perturb another's draws. Serialized into checkpoints so a resumed
/// run continues the exact same streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngBundle {
    pub shuffle: ChaCha8Rng,
    pub pairs: ChaCha8Rng,
}

impl RngBundle {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            shuffle: ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546),
            pairs: ChaCha8Rng::seed_from_u64(seed ^ 0x5041_4952),
        }
    }
}

/// RNG used once for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x494e_4954)
}

enum PhaseKind<'a> {
    Base,
    Additional { means: &'a PrototypeStore },
    Incremental,
}

fn gather_batch(
    features: &Matrix,
    labels: &[ClassId],
    idx: &[usize],
    rngs: &mut RngBundle,
) -> Result<Batch> {
    let mut inputs = Matrix::zeros(idx.len(), features.cols());
    for (o, &i) in idx.iter().enumerate() {
        inputs.row_mut(o).copy_from_slice(features.row(i));
    }
    let batch_labels: Vec<ClassId> = idx.iter().map(|&i| labels[i]).collect();
    let pairs = sample_pairs(&batch_labels, batch_labels.len(), &mut rngs.pairs);
    Batch::new(inputs, batch_labels, pairs)
}

/// One optimization phase over shuffled mini-batches. `encoder_only`
/// restricts the optimizer to the encoder prefix in the flat layout, which
/// leaves decoder parameters untouched.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    net: &mut Network,
    features: &Matrix,
    labels: &[ClassId],
    cfg: &TrainConfig,
    schedule: &LrSchedule,
    epochs: usize,
    encoder_only: bool,
    kind: PhaseKind<'_>,
    importance: &mut ImportanceState,
    rngs: &mut RngBundle,
    phase_name: &'static str,
) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    let total_len = net.param_count();
    let opt_len = if encoder_only {
        net.encoder_param_count()
    } else {
        total_len
    };
    let surrogate_mas =
        cfg.mas_per_batch_approx && matches!(importance, ImportanceState::Mas(_));
    let mut opt = AmsGrad::new(opt_len, schedule.lr_for_epoch(0));
    let mut order: Vec<usize> = (0..features.rows()).collect();

    for epoch in 0..epochs {
        opt.set_lr(schedule.lr_for_epoch(epoch));
        order.shuffle(&mut rngs.shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = gather_batch(features, labels, chunk, rngs)?;
            let mut theta = net.flatten_params();
            let reg = match kind {
                PhaseKind::Incremental => Some(importance.penalty(&theta)),
                _ => None,
            };
            let (loss, grads) = match (&kind, &reg) {
                (PhaseKind::Base, _) => loss_base(net, &batch, &cfg.weights)?,
                (PhaseKind::Additional { means }, _) => {
                    loss_add(net, &batch, &cfg.weights, means)?
                }
                (PhaseKind::Incremental, Some(reg)) => {
                    loss_inc(net, &batch, &cfg.weights, reg)?
                }
                (PhaseKind::Incremental, None) => unreachable!(),
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    phase: phase_name,
                    epoch,
                });
            }
            let grads_flat = grads.to_flat();
            let delta = opt.step(&mut theta[..opt_len], &grads_flat[..opt_len])?;
            net.set_params(&theta)?;

            if let ImportanceState::Si(si) = &mut *importance {
                let mut delta_full = vec![0.0; total_len];
                delta_full[..opt_len].copy_from_slice(&delta);
                si.accumulate_step(&grads_flat, &delta_full)?;
            }
            if surrogate_mas {
                let mut task_grads = grads_flat;
                if let Some(reg) = &reg {
                    for (t, g) in task_grads.iter_mut().zip(&reg.grad) {
                        *t -= cfg.weights.lambda_reg * g;
                    }
                }
                if let ImportanceState::Mas(mas) = &mut *importance {
                    mas.accumulate_batch_surrogate(&task_grads, batch.len() as u64)?;
                }
            }
        }
    }
    Ok(())
}

/// Per-sample gradient pass for MAS: one extra sweep over the task data,
/// taking |dF/dtheta| per sample with F restricted to the per-sample
/// decomposable terms (reconstruction and code sparsity; the pair-based
/// cosine term has no per-sample gradient).
fn mas_sample_pass(
    net: &Network,
    features: &Matrix,
    labels: &[ClassId],
    weights: &LossWeights,
    mas: &mut MasState,
) -> Result<()> {
    let w = LossWeights {
        lambda_cos: 0.0,
        lambda_reg: 0.0,
        lambda_center: 0.0,
        ..*weights
    };
    for r in 0..features.rows() {
        let mut input = Matrix::zeros(1, features.cols());
        input.row_mut(0).copy_from_slice(features.row(r));
        let batch = Batch::new(input, vec![labels[r]], Vec::new())?;
        let (_, grads) = loss_base(net, &batch, &w)?;
        mas.accumulate_sample(&grads.to_flat())?;
    }
    Ok(())
}

fn consolidate_importance(
    importance: &mut ImportanceState,
    net: &Network,
    features: &Matrix,
    labels: &[ClassId],
    cfg: &TrainConfig,
) -> Result<()> {
    let theta = net.flatten_params();
    match importance {
        ImportanceState::Si(si) => si.consolidate(&theta),
        ImportanceState::Mas(mas) => {
            if !cfg.mas_per_batch_approx {
                mas_sample_pass(net, features, labels, &cfg.weights, mas)?;
            }
            mas.consolidate(&theta)
        }
        ImportanceState::None => Ok(()),
    }
}

fn fresh_importance(cfg: &TrainConfig, net: &Network) -> Result<ImportanceState> {
    let theta = net.flatten_params();
    Ok(match cfg.regularizer {
        RegularizerKind::Si => ImportanceState::Si(SiState::new(&theta, cfg.si_xi)?),
        RegularizerKind::Mas => ImportanceState::Mas(MasState::new(&theta)),
        RegularizerKind::None => ImportanceState::None,
    })
}

fn validate_task_data(
    features: &Matrix,
    labels: &[ClassId],
    task_classes: &[ClassId],
) -> Result<()> {
    if features.rows() == 0 || features.rows() != labels.len() {
        return Err(Error::TaskStream(
            "task data must be non-empty with one label per row".into(),
        ));
    }
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &l in labels {
        if !task_classes.contains(&l) {
            return Err(Error::TaskStream(format!(
                "label {l} is outside the task's class set"
            )));
        }
        *counts.entry(l).or_insert(0) += 1;
    }
    for &c in task_classes {
        if counts.get(&c).copied().unwrap_or(0) == 0 {
            return Err(Error::TaskStream(format!(
                "class {c} has no training samples in this task"
            )));
        }
    }
    Ok(())
}

/// Encoder outputs grouped per class, for the LOF refinement step.
fn codes_by_class(
    net: &Network,
    features: &Matrix,
    labels: &[ClassId],
    batch_size: usize,
) -> Result<BTreeMap<ClassId, Matrix>> {
    let mut rows_per_class: BTreeMap<ClassId, Vec<Vec<f64>>> = BTreeMap::new();
    let mut at = 0;
    while at < features.rows() {
        let end = (at + batch_size).min(features.rows());
        let mut chunk = Matrix::zeros(end - at, features.cols());
        for (o, r) in (at..end).enumerate() {
            chunk.row_mut(o).copy_from_slice(features.row(r));
        }
        let codes = net.forward_encode(&chunk)?;
        for (o, r) in (at..end).enumerate() {
            rows_per_class
                .entry(labels[r])
                .or_default()
                .push(codes.row(o).to_vec());
        }
        at = end;
    }
    Ok(rows_per_class
        .into_iter()
        .map(|(c, rows)| (c, Matrix::from_rows(&rows)))
        .collect())
}

/// Base training: optimize the full autoencoder on the base loss, compute
/// class means, optionally refine them through LOF exclusion followed by
/// encoder-only additional training, then consolidate importance.
pub fn train_base(
    net: &mut Network,
    features: &Matrix,
    labels: &[ClassId],
    task_classes: &[ClassId],
    cfg: &TrainConfig,
    rngs: &mut RngBundle,
) -> Result<(ImportanceState, PrototypeStore)> {
    cfg.validate()?;
    validate_task_data(features, labels, task_classes)?;
    let mut importance = fresh_importance(cfg, net)?;

    run_phase(
        net,
        features,
        labels,
        cfg,
        &cfg.lr_base,
        cfg.epochs_base,
        false,
        PhaseKind::Base,
        &mut importance,
        rngs,
        "base training",
    )?;

    let mut store = PrototypeStore::new();
    compute_class_means(net, features, labels, cfg.batch_size, &mut store)?;

    if cfg.use_lof {
        let by_class = codes_by_class(net, features, labels, cfg.batch_size)?;
        let refined = exclude_and_mean(&by_class, &cfg.lof)?;
        store.replace_means(&refined)?;
        run_phase(
            net,
            features,
            labels,
            cfg,
            &cfg.lr_add,
            cfg.epochs_add,
            true,
            PhaseKind::Additional { means: &store },
            &mut importance,
            rngs,
            "additional training",
        )?;
    }

    consolidate_importance(&mut importance, net, features, labels, cfg)?;
    if !net.is_finite() {
        return Err(Error::NonFiniteLoss {
            phase: "base training",
            epoch: cfg.epochs_base,
        });
    }
    Ok((importance, store))
}

/// Incremental training: encoder-only optimization of the incremental loss
/// (base terms plus the importance drift penalty), then append the new class
/// means and consolidate importance for the next task. No LOF and no
/// additional training here.
#[allow(clippy::too_many_arguments)]
pub fn train_incremental(
    net: &mut Network,
    features: &Matrix,
    labels: &[ClassId],
    task_classes: &[ClassId],
    cfg: &TrainConfig,
    importance: &mut ImportanceState,
    store: &mut PrototypeStore,
    rngs: &mut RngBundle,
) -> Result<()> {
    cfg.validate()?;
    validate_task_data(features, labels, task_classes)?;
    for &c in task_classes {
        if store.contains(c) {
            return Err(Error::TaskStream(format!(
                "class {c} was already learned in an earlier task"
            )));
        }
    }

    run_phase(
        net,
        features,
        labels,
        cfg,
        &cfg.lr_inc,
        cfg.epochs_inc,
        true,
        PhaseKind::Incremental,
        importance,
        rngs,
        "incremental training",
    )?;

    compute_class_means(net, features, labels, cfg.batch_size, store)?;
    consolidate_importance(importance, net, features, labels, cfg)?;
    Ok(())
}

fn encode_rows(
    net: &Network,
    ds: &EmbeddingDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Matrix> {
    let mut codes = Matrix::zeros(indices.len(), net.code_dim());
    let mut at = 0;
    while at < indices.len() {
        let end = (at + batch_size.max(1)).min(indices.len());
        let chunk = ds.rows_to_matrix(&indices[at..end]);
        let out = net.forward_encode(&chunk)?;
        for (o, r) in (at..end).enumerate() {
            codes.row_mut(r).copy_from_slice(out.row(o));
        }
        at = end;
    }
    Ok(codes)
}

/// Accuracies over the held-out test split: base classes, the latest task's
/// classes, and everything seen so far.
pub fn evaluate_session(
    net: &Network,
    store: &PrototypeStore,
    test: &EmbeddingDataset,
    base_classes: &[ClassId],
    new_classes: &[ClassId],
    seen_classes: &[ClassId],
    batch_size: usize,
) -> Result<(f64, f64, f64)> {
    let all_idx = test.indices_with_labels(seen_classes);
    if all_idx.is_empty() {
        return Err(Error::DegenerateInput(
            "no test samples for the classes seen so far".into(),
        ));
    }
    let codes = encode_rows(net, test, &all_idx, batch_size)?;
    let preds = store.predict_batch(&codes)?;
    let labels = test.gather_labels(&all_idx);

    let subset_accuracy = |classes: &[ClassId]| -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for (p, l) in preds.iter().zip(&labels) {
            if classes.contains(l) {
                total += 1;
                if p == l {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::DegenerateInput(
                "empty evaluation subset".into(),
            ));
        }
        Ok(correct as f64 / total as f64)
    };

    let alpha_base = subset_accuracy(base_classes)?;
    let alpha_new = subset_accuracy(new_classes)?;
    let alpha_all = crate::metrics::accuracy(&preds, &labels)?;
    Ok((alpha_base, alpha_new, alpha_all))
}

/// Everything needed to continue a run mid-stream. Checkpoints serialize
/// this state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub net: Network,
    pub importance: ImportanceState,
    pub store: PrototypeStore,
    pub rngs: RngBundle,
    /// Index of the next task to train (2..=T+1; T+1 means finished).
    pub next_session: usize,
    pub records: Vec<SessionRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct StreamOptions {
    /// Write a checkpoint after the base task and after every incremental
    /// session into this directory.
    pub checkpoint_dir: Option<PathBuf>,
    /// When known, the offline joint accuracy used to normalize psi metrics.
    pub alpha_ideal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sessions: Vec<SessionRecord>,
    pub psi: Option<PsiSummary>,
}

fn task_features(train: &EmbeddingDataset, task: &Task) -> (Matrix, Vec<ClassId>) {
    (
        train.rows_to_matrix(&task.train_indices),
        train.gather_labels(&task.train_indices),
    )
}

fn save_session_checkpoint(state: &StreamState, dir: &std::path::Path) -> Result<()> {
    let completed = state.next_session - 1;
    let path = dir.join(format!("checkpoint_task_{completed:03}.json"));
    crate::checkpoint::save_checkpoint(&crate::checkpoint::Checkpoint::new(state.clone(), None), &path)
}

fn run_remaining_sessions(
    state: &mut StreamState,
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    stream: &TaskStream,
    cfg: &TrainConfig,
    opts: &StreamOptions,
) -> Result<()> {
    let base_classes = stream.tasks[0].classes.clone();
    let mut seen: Vec<ClassId> = stream
        .tasks
        .iter()
        .take(state.next_session - 1)
        .flat_map(|t| t.classes.iter().copied())
        .collect();

    for task in &stream.tasks[state.next_session - 1..] {
        let (features, labels) = task_features(train, task);
        train_incremental(
            &mut state.net,
            &features,
            &labels,
            &task.classes,
            cfg,
            &mut state.importance,
            &mut state.store,
            &mut state.rngs,
        )?;
        seen.extend(task.classes.iter().copied());
        let (alpha_base, alpha_new, alpha_all) = evaluate_session(
            &state.net,
            &state.store,
            test,
            &base_classes,
            &task.classes,
            &seen,
            cfg.batch_size,
        )?;
        state.records.push(SessionRecord {
            session_index: task.index,
            alpha_base,
            alpha_new,
            alpha_all,
        });
        state.next_session = task.index + 1;
        if let Some(dir) = &opts.checkpoint_dir {
            save_session_checkpoint(state, dir)?;
        }
    }
    Ok(())
}

fn finish_metrics(
    state: &StreamState,
    stream: &TaskStream,
    opts: &StreamOptions,
) -> Result<RunMetrics> {
    let psi = match opts.alpha_ideal {
        Some(alpha_ideal) => {
            let cfg = EvalConfig::new(alpha_ideal, stream.total_tasks())?;
            Some(psi_metrics(&state.records, &cfg)?)
        }
        None => None,
    };
    Ok(RunMetrics {
        sessions: state.records.clone(),
        psi,
    })
}

/// Trains the full stream: base task first, then every incremental task in
/// order, evaluating after each session. Deterministic given the config
/// seed.
pub fn run_stream(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    stream: &TaskStream,
    cfg: &TrainConfig,
    opts: &StreamOptions,
) -> Result<RunMetrics> {
    cfg.validate()?;
    let mut rng = init_rng(cfg.seed);
    let hidden = cfg.resolved_hidden_dims(train.dim());
    let mut net = Network::new(train.dim(), &hidden, &mut rng)?;
    let mut rngs = RngBundle::from_seed(cfg.seed);

    let base = &stream.tasks[0];
    let (features, labels) = task_features(train, base);
    let (importance, store) = train_base(&mut net, &features, &labels, &base.classes, cfg, &mut rngs)?;

    let mut state = StreamState {
        net,
        importance,
        store,
        rngs,
        next_session: 2,
        records: Vec::new(),
    };
    if let Some(dir) = &opts.checkpoint_dir {
        save_session_checkpoint(&state, dir)?;
    }
    run_remaining_sessions(&mut state, train, test, stream, cfg, opts)?;
    finish_metrics(&state, stream, opts)
}

/// Continues a checkpointed run. The caller supplies the same dataset,
/// stream, and config as the original run; the state carries everything
/// else (including RNG positions), so the remaining trace is identical to a
/// straight-through run.
pub fn resume_stream(
    mut state: StreamState,
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    stream: &TaskStream,
    cfg: &TrainConfig,
    opts: &StreamOptions,
) -> Result<RunMetrics> {
    cfg.validate()?;
    if state.next_session < 2 || state.next_session > stream.total_tasks() + 1 {
        return Err(Error::TaskStream(format!(
            "checkpoint next_session {} is outside this stream",
            state.next_session
        )));
    }
    if state.net.input_dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            context: "resume dataset dimension",
            expected: state.net.input_dim(),
            actual: train.dim(),
        });
    }
    run_remaining_sessions(&mut state, train, test, stream, cfg, opts)?;
    finish_metrics(&state, stream, opts)
}

/// Offline upper bound: base-training procedure over all classes at once,
/// evaluated on the full test split. Returns the test accuracy (the
/// measured alpha_ideal).
pub fn run_joint(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let mut rng = init_rng(cfg.seed);
    let hidden = cfg.resolved_hidden_dims(train.dim());
    let mut net = Network::new(train.dim(), &hidden, &mut rng)?;
    let mut rngs = RngBundle::from_seed(cfg.seed);
    let all_classes: Vec<ClassId> = (0..train.num_classes()).collect();
    let indices: Vec<usize> = (0..train.len()).collect();
    let features = train.rows_to_matrix(&indices);
    let labels = train.labels().to_vec();
    let (_importance, store) =
        train_base(&mut net, &features, &labels, &all_classes, cfg, &mut rngs)?;

    let test_idx: Vec<usize> = (0..test.len()).collect();
    let codes = encode_rows(&net, test, &test_idx, cfg.batch_size)?;
    let preds = store.predict_batch(&codes)?;
    crate::metrics::accuracy(&preds, test.labels())
}
