//! Masked-autoencoder Vision Transformer.
//!
//! Images are split into patches ([`patchify`]), a random subset is hidden
//! ([`sample_mask`]), the encoder sees only the visible patches and the
//! decoder rebuilds all N patches from encoder tokens plus a shared mask
//! token. The loss is the pixel MSE over the hidden patches only.
//!
//! All graph code lives in [`Graph`] and is generic over the scalar type, so
//! the same forward pass runs at `f32` for training and at `f64` for
//! finite-difference checks.

mod config;
mod params;
mod patch;
mod vit;

use thiserror::Error;
use usfmae_tensor::TensorError;

pub use config::ModelConfig;
pub use params::{Bound, ParamStore};
pub use patch::{patchify, sample_mask, MaskPlan, PatchGrid};
pub use vit::{
    classify_forward, cross_entropy, is_encoder_param, mae_loss, mae_loss_matrix,
    pretrain_forward, softmax_rows, ClassifierModel, Graph, MaePretrainModel, Pooling,
    PretrainOutput, SampleGrads,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image {height}x{width} is not divisible into {patch}-pixel patches")]
    IndivisibleDims {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask plan has no masked patches")]
    EmptyMask,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
