//! Image cleaning for ultrasound scans.
//!
//! [`imgproc`] holds pixel primitives (colour conversion, CLAHE, Canny,
//! contours, morphology, resizing, normalization). [`annomask`] builds on them
//! to find burned-in annotations and remove them by PDE inpainting.
//! [`synth`] generates scans with known overlays for testing.

pub mod annomask;
pub mod error;
pub mod imgproc;
pub mod raster;
pub mod synth;

pub use error::{ImagingError, Result};
pub use raster::{BinaryMask, RasterImage};
