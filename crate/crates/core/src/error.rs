use crate::ClassId;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no mean stored for class {0}")]
    MissingClassMean(ClassId),

    #[error("class {0} already has a stored mean")]
    DuplicateClass(ClassId),

    #[error("prototype store is empty")]
    EmptyStore,

    #[error("non-finite loss during {phase} (epoch {epoch})")]
    NonFiniteLoss { phase: &'static str, epoch: usize },

    #[error("non-finite gradient rejected by optimizer at step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("gradient check aborted: {0}")]
    GradCheckAborted(String),

    #[error("task stream error: {0}")]
    TaskStream(String),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("checkpoint version mismatch: file has {found}, this build expects {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("missing sessions in metric records: {0:?}")]
    MissingSessions(Vec<usize>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
