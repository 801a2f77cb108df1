//! End-to-end annotation removal.

use serde::{Deserialize, Serialize};

use super::color_mask::color_annotation_mask_with;
use super::gray_mask::{grayscale_annotation_mask_with, GrayMaskParams};
use super::inpaint::{inpaint_ns, InpaintConfig};
use super::refine::{fuse, RefineParams};
use super::text::{boxes_to_mask, detect_text_regions, ExternalTextDetector, HeuristicTextDetector, TextDetection, TextDetector};
use crate::error::{ImagingError, Result};
use crate::imgproc::clahe::{clahe, ClaheParams};
use crate::imgproc::color::luminance_lab;
use crate::imgproc::morph::dilate;
use crate::imgproc::normalize::NormalizationSpec;
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DetectorChoice {
    Heuristic(HeuristicTextDetector),
    External(ExternalTextDetector),
}

impl Default for DetectorChoice {
    fn default() -> Self {
        DetectorChoice::Heuristic(HeuristicTextDetector::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextStageConfig {
    pub enabled: bool,
    /// Run detection on the CLAHE-enhanced luminance instead of the raw one.
    pub use_clahe: bool,
    pub clahe: ClaheParams,
    pub min_confidence: f32,
    pub detector: DetectorChoice,
}

impl Default for TextStageConfig {
    fn default() -> Self {
        TextStageConfig {
            enabled: true,
            use_clahe: true,
            clahe: ClaheParams::default(),
            min_confidence: 0.5,
            detector: DetectorChoice::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorStageConfig {
    pub enabled: bool,
    pub saturation_floor: f32,
    pub value_floor: f32,
    pub k: usize,
    pub seed: u64,
}

impl Default for ColorStageConfig {
    fn default() -> Self {
        ColorStageConfig {
            enabled: true,
            saturation_floor: 0.35,
            value_floor: super::DEFAULT_VALUE_FLOOR,
            k: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrayStageConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: GrayMaskParams,
}

impl Default for GrayStageConfig {
    fn default() -> Self {
        GrayStageConfig {
            enabled: true,
            params: GrayMaskParams::default(),
        }
    }
}

/// Every threshold used by [`clean_image`] and the batch driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub text: TextStageConfig,
    pub color: ColorStageConfig,
    pub gray: GrayStageConfig,
    pub refine: RefineParams,
    pub inpaint: InpaintConfig,
    /// Side length of the square PNG written by the batch driver.
    pub output_size: usize,
    /// Applied when cleaned images are loaded as model inputs.
    pub normalization: NormalizationSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            text: TextStageConfig::default(),
            color: ColorStageConfig::default(),
            gray: GrayStageConfig::default(),
            refine: RefineParams::default(),
            inpaint: InpaintConfig::default(),
            output_size: 224,
            normalization: NormalizationSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.text.min_confidence) {
            return Err(ImagingError::BadThreshold {
                name: "text.min_confidence",
                value: self.text.min_confidence,
            });
        }
        if self.color.k < 2 {
            return Err(ImagingError::InvalidParameter(format!("color.k must be >= 2, got {}", self.color.k)));
        }
        if self.output_size == 0 {
            return Err(ImagingError::InvalidParameter("output_size must be positive".into()));
        }
        self.inpaint.validate()?;
        self.normalization.validate()
    }
}

/// Intermediate masks from one [`clean_image`] call.
#[derive(Debug, Clone)]
pub struct MaskBundle {
    pub text: BinaryMask,
    pub color: BinaryMask,
    pub gray: BinaryMask,
    /// `close(open(text ∪ color ∪ gray))`, before the fringe dilation.
    pub fused: BinaryMask,
    /// `fused` dilated by the refine radius; the region actually inpainted.
    pub inpaint_region: BinaryMask,
    pub detections: Vec<TextDetection>,
}

/// Runs detection, fusion and inpainting on one image. Grayscale input is
/// promoted to RGB by channel replication.
pub fn clean_image(img: &RasterImage, cfg: &PipelineConfig) -> Result<(RasterImage, MaskBundle)> {
    cfg.validate()?;
    let rgb = img.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let empty = BinaryMask::new(w, h);

    let (text, detections) = if cfg.text.enabled {
        let lum = luminance_lab(&rgb).map_err(|e| e.at("luminance"))?;
        let probe = if cfg.text.use_clahe {
            clahe(&lum, cfg.text.clahe.clip_limit, cfg.text.clahe.tile_grid).map_err(|e| e.at("clahe"))?
        } else {
            lum
        };
        let detector: &dyn TextDetector = match &cfg.text.detector {
            DetectorChoice::Heuristic(d) => d,
            DetectorChoice::External(d) => d,
        };
        let found = detect_text_regions(&probe, detector, cfg.text.min_confidence).map_err(|e| e.at("text"))?;
        (boxes_to_mask(w, h, &found), found)
    } else {
        (empty.clone(), Vec::new())
    };

    let color = if cfg.color.enabled {
        color_annotation_mask_with(&rgb, cfg.color.saturation_floor, cfg.color.value_floor, cfg.color.k, cfg.color.seed)
            .map_err(|e| e.at("color"))?
    } else {
        empty.clone()
    };

    let gray = if cfg.gray.enabled {
        grayscale_annotation_mask_with(&rgb.to_gray(), &cfg.gray.params).map_err(|e| e.at("gray"))?
    } else {
        empty.clone()
    };

    let fused = fuse(&text, &color, &gray, cfg.refine.open_radius, cfg.refine.close_radius).map_err(|e| e.at("refine"))?;
    let inpaint_region = dilate(&fused, cfg.refine.dilation_radius + cfg.inpaint.dilation_radius);
    let cleaned = if inpaint_region.is_empty() {
        rgb
    } else {
        inpaint_ns(&rgb, &inpaint_region, &cfg.inpaint).map_err(|e| e.at("inpaint"))?
    };
    Ok((
        cleaned,
        MaskBundle {
            text,
            color,
            gray,
            fused,
            inpaint_region,
            detections,
        },
    ))
}
