use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Architecture hyperparameters shared by the pretraining and classifier models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub encoder_layers: usize,
    pub encoder_dim: usize,
    pub encoder_heads: usize,
    pub decoder_layers: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
    pub mask_ratio: f64,
    pub mlp_ratio: usize,
    pub use_class_token: bool,
    pub layer_norm_eps: f64,
    /// Dropout on attention and MLP outputs in training mode.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl ModelConfig {
    /// ViT-Base encoder with an 8-layer, 512-wide decoder at 224².
    pub fn base() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            encoder_layers: 12,
            encoder_dim: 768,
            encoder_heads: 12,
            decoder_layers: 8,
            decoder_dim: 512,
            decoder_heads: 8,
            mask_ratio: 0.25,
            mlp_ratio: 4,
            use_class_token: true,
            layer_norm_eps: 1e-6,
            dropout: 0.0,
        }
    }

    /// Desk-scale preset: 64² images, 8-px patches, 4×128 encoder, 2×64 decoder.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 8,
            encoder_layers: 4,
            encoder_dim: 128,
            encoder_heads: 4,
            decoder_layers: 2,
            decoder_dim: 64,
            decoder_heads: 4,
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::base()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.patch_size == 0 || self.image_size == 0 || self.channels == 0 {
            return bad("image_size, patch_size and channels must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(ModelError::IndivisibleDims {
                height: self.image_size,
                width: self.image_size,
                patch: self.patch_size,
            });
        }
        for (what, dim, heads) in [
            ("encoder", self.encoder_dim, self.encoder_heads),
            ("decoder", self.decoder_dim, self.decoder_heads),
        ] {
            if heads == 0 || dim == 0 || dim % heads != 0 {
                return bad(format!("{what}_dim {dim} not divisible by {what}_heads {heads}"));
            }
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio must lie in [0, 1), got {}", self.mask_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.mlp_ratio == 0 || self.layer_norm_eps <= 0.0 {
            return bad("mlp_ratio and layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// N, the number of patches per image.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// d = P²·C, pixels per patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// M = floor(mask_ratio · N).
    pub fn num_masked(&self) -> usize {
        (self.mask_ratio * self.num_patches() as f64).floor() as usize
    }

    pub(crate) fn encoder_tokens(&self) -> usize {
        self.num_patches() + usize::from(self.use_class_token)
    }
}
