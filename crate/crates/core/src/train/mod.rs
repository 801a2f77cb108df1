//! Optimizer, learning-rate schedule, augmentation, training drivers and
//! checkpoint persistence.

mod augment;
mod checkpoint;
mod loops;
mod optim;
mod schedule;

use std::path::{Path, PathBuf};

use thiserror::Error;
use usfmae_imaging::ImagingError;

use crate::model::ModelError;

pub use augment::{apply_augment, augment, AugmentConfig, AugmentParams};
pub use checkpoint::{Checkpoint, CheckpointKind, FORMAT_VERSION, MAGIC};
pub use loops::{
    finetune, grid_search, mean_cross_entropy, predict_proba, prepare_image, pretrain,
    resume_pretrain, FinetuneConfig, FinetuneOutcome, GridPoint, GridSearchConfig,
    GridSearchResult, LogRow, PretrainConfig, PretrainOutcome, TrainLog,
};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig};
pub use schedule::{lr_at, ScheduleConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("label {label} out of range for {classes} classes (step {step})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        step: usize,
    },
    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),
    #[error("not a checkpoint: magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated at tensor {tensor}")]
    TruncatedFile { tensor: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Tensor(#[from] usfmae_tensor::TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
