//! Annotation detection, mask fusion and inpainting.

pub mod color_mask;
pub mod gray_mask;
pub mod inpaint;
pub mod pipeline;
pub mod refine;
pub mod text;

/// Clusters darker than this mean value are treated as noise, not ink.
pub const DEFAULT_VALUE_FLOOR: f32 = 0.2;

pub use color_mask::{color_annotation_mask, color_annotation_mask_with, kmeans};
pub use gray_mask::{grayscale_annotation_mask, grayscale_annotation_mask_with, GrayMaskParams};
pub use inpaint::{inpaint_ns, InpaintConfig};
pub use pipeline::{clean_image, DetectorChoice, MaskBundle, PipelineConfig};
pub use refine::{fuse, fuse_and_refine, RefineParams};
pub use text::{detect_text_regions, ExternalTextDetector, HeuristicTextDetector, TextDetection, TextDetector};
