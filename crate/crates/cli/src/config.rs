use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use usfmae_core::corpus::FrameSamplingPolicy;
use usfmae_core::model::ModelConfig;
use usfmae_core::train::{FinetuneConfig, GridSearchConfig, PretrainConfig};
use usfmae_imaging::annomask::PipelineConfig;

/// Everything a run can be configured with. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness; copied into the pretrain and finetune sections.
    pub seed: u64,
    /// Named architecture: "tiny" or "base". Ignored when `model` is set.
    pub preset: String,
    /// Full architecture; overrides `preset`.
    pub model: Option<ModelConfig>,
    pub pipeline: PipelineConfig,
    pub frames: FrameSamplingPolicy,
    pub debug_masks: bool,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub grid_search: GridSearchConfig,
    /// Folds for grid search when the manifest has no fold column.
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            preset: "tiny".into(),
            model: None,
            pipeline: PipelineConfig::default(),
            frames: FrameSamplingPolicy::default(),
            debug_masks: false,
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            grid_search: GridSearchConfig::default(),
            folds: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = match &self.model {
            Some(m) => m.clone(),
            None => match ModelConfig::preset(&self.preset) {
                Some(m) => m,
                None => bail!("unknown preset {:?} (expected \"tiny\" or \"base\")", self.preset),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pushes the top-level seed into every section that carries one.
    pub fn propagate_seed(&mut self) {
        self.pretrain.seed = self.seed;
        self.finetune.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.pipeline.validate()?;
        self.frames.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.folds < 2 {
            bail!("folds must be at least 2, got {}", self.folds);
        }
        Ok(())
    }

    pub fn write_resolved(&self, out: &Path) -> Result<()> {
        let path = out.join("config.resolved.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Long help text listing every config key with its default.
pub fn config_help() -> String {
    let defaults = serde_json::to_string_pretty(&RunConfig::default()).expect("default config serializes");
    format!(
        "CONFIG FILE (--config)\n\
         A JSON object. Every key is optional and unknown keys are rejected.\n\
         Command-line flags win over the file. Top-level keys:\n  \
         seed          u64, the only source of randomness (overwrites pretrain.seed and finetune.seed)\n  \
         preset        \"tiny\" or \"base\" model architecture\n  \
         model         full model object (image_size, patch_size, channels, encoder_*, decoder_*,\n                \
         mask_ratio, mlp_ratio, use_class_token, layer_norm_eps, dropout); overrides preset\n  \
         pipeline      annotation masking, inpainting, output_size and normalization for preprocess\n  \
         frames        frames_per_second sampled from clips\n  \
         debug_masks   write fused annotation masks during preprocess\n  \
         pretrain      epochs, batch_size, base_lr, warmup_fraction, lr_scaling_reference_batch,\n                \
         optimizer, clip_norm, augment, normalization, full_state\n  \
         finetune      as pretrain plus pooling (\"class_token\" | \"mean_pool\") and freeze_encoder\n  \
         grid_search   learning_rates and weight_decays tried by finetune --grid-search\n  \
         folds         folds for grid search when the manifest has no fold column\n\n\
         Defaults:\n{defaults}\n"
    )
}
