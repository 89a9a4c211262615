//! Incremental class learning with a prototype-extracting autoencoder.
//!
//! The engine trains a dense autoencoder whose code vectors act as
//! prototypes, classifies with cosine nearest-class-mean over per-class
//! prototype means, counters catastrophic forgetting with synaptic
//! intelligence or memory-aware-synapses drift penalties, and optionally
//! refines base-class means through local-outlier-factor exclusion plus
//! center-loss retraining. Runs report per-session accuracies and the
//! psi_base / psi_new / psi_all continual-learning metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod importance;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod outlier;
pub mod prototype;
pub mod trainer;

/// Class labels are small contiguous integers starting at 0.
pub type ClassId = u32;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfigFile;
pub use data::{
    generate_synthetic, inject_label_noise, split_tasks, ClassOrder, EmbeddingDataset,
    SynthConfig,
};
pub use error::{Error, Result};
pub use importance::{ImportanceState, MasState, SiState};
pub use losses::{
    cosine_similarity, loss_add, loss_base, loss_center, loss_cos, loss_inc, loss_l1, loss_mse,
    sample_pairs, Batch, LossWeights, PairSample, RegPenalty,
};
pub use matrix::Matrix;
pub use metrics::{accuracy, psi_metrics, EvalConfig, PsiSummary, SessionRecord};
pub use net::{
    elu, finite_diff_check, Activation, ForwardCache, GradCheckReport, GradientBuffer,
    LayerParams, Network,
};
pub use optim::AmsGrad;
pub use outlier::{cosine_distance, exclude_and_mean, lof_scores, LofConfig};
pub use prototype::{compute_class_means, ClassMean, Prediction, PrototypeStore};
pub use trainer::{
    evaluate_session, init_rng, resume_stream, run_joint, run_stream, train_base,
    train_incremental, LrSchedule, RegularizerKind, RngBundle, RunMetrics, StreamOptions,
    StreamState, Task, TaskStream, TrainConfig,
};
