//! Run configuration: a TOML file with sections for data, split,
//! architecture, training, loss weights, LOF, and evaluation. Unknown keys
//! are errors. Defaults are materialized on load so a run directory can
//! persist the fully resolved configuration.

use crate::data::{ClassOrder, SynthConfig};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::outlier::LofConfig;
use crate::trainer::{LrSchedule, RegularizerKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Classes in the base task. Omitted means half of all classes.
    pub base_classes: Option<usize>,
    pub classes_per_increment: usize,
    /// `ascending` or `shuffled:<seed>`.
    pub class_order: String,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            base_classes: None,
            classes_per_increment: 1,
            class_order: "ascending".into(),
        }
    }
}

impl SplitSection {
    pub fn class_order(&self) -> Result<ClassOrder> {
        self.class_order.parse()
    }

    pub fn resolved_base_classes(&self, num_classes: usize) -> usize {
        self.base_classes.unwrap_or(num_classes / 2)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSection {
    /// Encoder layer widths; empty derives [D/4, D/4] from the data.
    pub hidden_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs_base: usize,
    pub epochs_add: usize,
    pub epochs_inc: usize,
    pub lr_base: LrSchedule,
    pub lr_add: LrSchedule,
    pub lr_inc: LrSchedule,
    pub regularizer: RegularizerKind,
    pub si_xi: f64,
    pub mas_per_batch_approx: bool,
    pub use_lof: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs_base: t.epochs_base,
            epochs_add: t.epochs_add,
            epochs_inc: t.epochs_inc,
            lr_base: t.lr_base,
            lr_add: t.lr_add,
            lr_inc: t.lr_inc,
            regularizer: t.regularizer,
            si_xi: t.si_xi,
            mas_per_batch_approx: t.mas_per_batch_approx,
            use_lof: t.use_lof,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Offline joint accuracy for psi normalization; measure it with the
    /// `joint` subcommand when unknown.
    pub alpha_ideal: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub split: SplitSection,
    pub architecture: ArchitectureSection,
    pub train: TrainSection,
    pub weights: LossWeights,
    pub lof: LofConfig,
    pub eval: EvalSection,
}

impl RunConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let has_paths = self.data.train_path.is_some() || self.data.test_path.is_some();
        let has_synth = self.data.synth.is_some();
        if has_paths && has_synth {
            return Err(Error::InvalidConfig(
                "configure either dataset paths or [data.synth], not both".into(),
            ));
        }
        if !has_paths && !has_synth {
            return Err(Error::InvalidConfig(
                "no data source: set data.train_path/test_path or [data.synth]".into(),
            ));
        }
        if has_paths && (self.data.train_path.is_none() || self.data.test_path.is_none()) {
            return Err(Error::InvalidConfig(
                "both train_path and test_path are required".into(),
            ));
        }
        if let Some(synth) = &self.data.synth {
            synth.validate()?;
            let c = synth.num_classes as usize;
            let base = self.split.resolved_base_classes(c);
            if base == 0 || base >= c {
                return Err(Error::InvalidConfig(format!(
                    "base class count {base} must be in 1..{c}"
                )));
            }
            let rest = c - base;
            if rest % self.split.classes_per_increment != 0 {
                return Err(Error::InvalidConfig(format!(
                    "{rest} incremental classes do not divide into tasks of {}",
                    self.split.classes_per_increment
                )));
            }
        }
        if self.split.classes_per_increment == 0 {
            return Err(Error::InvalidConfig(
                "classes_per_increment must be positive".into(),
            ));
        }
        self.split.class_order()?;
        if let Some(alpha) = self.eval.alpha_ideal {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha_ideal must be in (0, 1], got {alpha}"
                )));
            }
        }
        self.train_config().validate()
    }

    /// Assembles the trainer configuration from the relevant sections.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs_base: self.train.epochs_base,
            epochs_add: self.train.epochs_add,
            epochs_inc: self.train.epochs_inc,
            lr_base: self.train.lr_base,
            lr_add: self.train.lr_add,
            lr_inc: self.train.lr_inc,
            weights: self.weights,
            regularizer: self.train.regularizer,
            si_xi: self.train.si_xi,
            mas_per_batch_approx: self.train.mas_per_batch_approx,
            use_lof: self.train.use_lof,
            lof: self.lof,
            hidden_dims: self.architecture.hidden_dims.clone(),
            seed: self.train.seed,
        }
    }

    /// The fully resolved config (all defaults materialized) as TOML.
    pub fn to_resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config serialization failed: {e}")))
    }
}
