//! Checkpoint persistence: the full resumable stream state (network,
//! importance, prototype store, RNG positions, metric trace) as JSON.
//!
//! JSON float serialization uses shortest-round-trip formatting, so f64
//! parameters survive save/load bit-identically.

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::optim::AmsGrad;
use crate::trainer::StreamState;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "picl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub state: StreamState,
    /// Optimizer state, present only for mid-phase snapshots. Session
    /// boundaries start the next phase with a fresh optimizer.
    pub optimizer: Option<AmsGrad>,
}

impl Checkpoint {
    pub fn new(state: StreamState, optimizer: Option<AmsGrad>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            state,
            optimizer,
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(ckpt)
        .map_err(|e| Error::DatasetFormat(format!("checkpoint serialization failed: {e}")))?;
    write_atomic(path, &json)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;

    // Version gate first so a format bump gives a clear refusal instead of a
    // deserialization error.
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = serde_json::from_slice(&bytes)
        .map_err(|e| Error::DatasetFormat(format!("not a checkpoint file: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::DatasetFormat(format!(
            "unexpected checkpoint format `{}`",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::DatasetFormat(format!("corrupt checkpoint: {e}")))
}
