//! Pixel-level primitives shared by the cleaning pipeline.

pub mod clahe;
pub mod color;
pub mod contours;
pub mod edges;
pub mod morph;
pub mod normalize;
pub mod resize;

pub use clahe::{clahe, ClaheParams};
pub use color::{hsv_to_rgb, luminance_lab, rgb_to_hsv};
pub use contours::{extract_contours, label_components, Contour};
pub use edges::canny;
pub use morph::{dilate, erode, morph, MorphOp};
pub use normalize::{denormalize, normalize, NormalizationSpec};
pub use resize::{resize_bilinear, sample_reflect};
