//! Training loop, seeded experiment orchestration, and the ablation
//! protocols: tuning-regime comparison on extension rate, character-position
//! on/off on text accuracy, and the data-scale trend.

mod ablate;
mod evalsuite;
mod train;

pub use ablate::{
    ablate_cpe, ablate_data_scale, ablate_extension, pretrain_base, CpeAblationReport,
    DataScaleCell, DataScaleReport, ExtensionAblationReport, REFERENCE_DATA_SCALE,
    REFERENCE_EXTENSION_RATES, REFERENCE_MULTI_LINE_SEN_ACC, REFERENCE_SEN_ACC,
};
pub use evalsuite::eval_suite;
pub use train::{train, TrainResult};

use crate::data::{DataError, MaskRegime};
use crate::flow::FlowConfig;
use crate::model::{ModelConfig, ModelError, TrainMode};
use crate::tokens::TokenError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    pub mask_regime: MaskRegime,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Full,
            lr: 1e-3,
            weight_decay: 1e-2,
            batch_size: 8,
            epochs: 1,
            seed: 0,
            grad_clip: 1.0,
            mask_regime: MaskRegime::Poster,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.lr > 0.0) {
            return Err(HarnessError::InvalidSpec("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::InvalidSpec("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A complete experiment description, loadable from JSON by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub flow: FlowConfig,
    pub eval_seed: u64,
    /// Extra knobs used only by the ablation protocols.
    #[serde(default)]
    pub ablation: AblationKnobs,
}

/// Ablation-only settings; every field has a sensible default so plain
/// training specs can omit the whole section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationKnobs {
    /// Random-patch pretraining set for the tuning-mode and data-scale
    /// protocols; falls back to `train_dataset` when absent.
    pub pretrain_dataset: Option<PathBuf>,
    /// Epoch budget for the pretraining stage; falls back to `train.epochs`.
    pub pretrain_epochs: Option<usize>,
    pub lora_rank: usize,
    pub adapter_blocks: usize,
    /// Adaptation epoch budgets swept by the data-scale protocol.
    pub epoch_cells: Vec<usize>,
}

impl Default for AblationKnobs {
    fn default() -> Self {
        AblationKnobs {
            pretrain_dataset: None,
            pretrain_epochs: None,
            lora_rank: 4,
            adapter_blocks: 2,
            epoch_cells: vec![1, 2, 4],
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(json).map_err(|e| HarnessError::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("train config mode does not match the model's mode")]
    ModeMismatch,
    #[error("empty training or test set")]
    EmptySet,
    #[error("dataset config hash mismatch between checkpoint and dataset")]
    ConfigMismatch,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Deterministic seed derivation for nested experiment stages.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    crate::data::fnv1a(&bytes)
}

/// Honor the `POSTERLAB_THREADS` environment variable for the global worker
/// pool; silently keeps the default when unset or already initialized.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("POSTERLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
