//! Grayscale mark detection from closed edge contours.

use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};
use crate::imgproc::contours::extract_contours;
use crate::imgproc::edges::canny;
use crate::imgproc::morph::{dilate, morph, MorphOp};
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrayMaskParams {
    pub low: f32,
    pub high: f32,
    /// Largest filled contour kept, as a fraction of the image area.
    pub area_ceiling: f32,
    /// Radius of the closing that joins the two edge traces of a thin mark.
    pub bridge_radius: usize,
    /// Minimum absolute deviation from the surrounding ring for a pixel to count as ink.
    pub min_contrast: f32,
    /// Deviation must also exceed this many standard deviations of the ring.
    pub ring_sigmas: f32,
}

impl Default for GrayMaskParams {
    fn default() -> Self {
        GrayMaskParams {
            low: 0.04,
            high: 0.08,
            area_ceiling: 0.02,
            bridge_radius: 1,
            min_contrast: 0.3,
            ring_sigmas: 3.0,
        }
    }
}

/// [`grayscale_annotation_mask_with`] with default parameters apart from the thresholds.
pub fn grayscale_annotation_mask(gray: &RasterImage, low: f32, high: f32) -> Result<BinaryMask> {
    grayscale_annotation_mask_with(
        gray,
        &GrayMaskParams {
            low,
            high,
            ..GrayMaskParams::default()
        },
    )
}

/// Canny edges, bridged by a small closing, are traced into contours. Each
/// contour that encloses pixels beyond its own chain and whose filled area
/// stays under the ceiling becomes a candidate region. Within a candidate,
/// pixels that stand out from the ring just outside it (by `min_contrast`
/// and by `ring_sigmas` ring deviations) are marked.
pub fn grayscale_annotation_mask_with(gray: &RasterImage, p: &GrayMaskParams) -> Result<BinaryMask> {
    if gray.channels() != 1 {
        return Err(ImagingError::WrongChannelCount {
            expected: 1,
            found: gray.channels(),
        });
    }
    let (w, h) = (gray.width(), gray.height());
    let edges = canny(gray, p.low, p.high)?;
    let bridged = morph(&edges, MorphOp::Close, p.bridge_radius);
    let ceiling = (p.area_ceiling as f64 * (w * h) as f64).floor() as usize;
    let mut out = BinaryMask::new(w, h);
    for contour in extract_contours(&bridged) {
        let filled = contour.filled(w, h);
        let area = filled.count();
        if area > ceiling || area <= contour.unique_points().len() {
            continue;
        }
        let ring = ring_stats(gray, &filled, &contour.bbox);
        let Some((mean, std)) = ring else { continue };
        let cut = p.min_contrast.max(p.ring_sigmas * std);
        let (x0, y0, x1, y1) = contour.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if filled.get(x, y) && (gray.get(x, y, 0) - mean).abs() >= cut {
                    out.set(x, y, true);
                }
            }
        }
    }
    Ok(out)
}

/// Mean and standard deviation over the 2-pixel band around `region`.
fn ring_stats(gray: &RasterImage, region: &BinaryMask, bbox: &(usize, usize, usize, usize)) -> Option<(f32, f32)> {
    const BAND: usize = 2;
    let (w, h) = (gray.width(), gray.height());
    let (x0, y0, x1, y1) = *bbox;
    let (bx0, by0) = (x0.saturating_sub(BAND), y0.saturating_sub(BAND));
    let (bx1, by1) = ((x1 + BAND).min(w - 1), (y1 + BAND).min(h - 1));
    // dilate only the local window
    let (lw, lh) = (bx1 - bx0 + 1, by1 - by0 + 1);
    let local = BinaryMask::from_fn(lw, lh, |x, y| region.get(x + bx0, y + by0));
    let grown = dilate(&local, BAND);
    let (mut n, mut sum, mut sq) = (0usize, 0f64, 0f64);
    for y in 0..lh {
        for x in 0..lw {
            if grown.get(x, y) && !local.get(x, y) {
                let v = gray.get(x + bx0, y + by0, 0) as f64;
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    Some((mean as f32, var.sqrt() as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_empty() {
        let img = RasterImage::filled(32, 32, 1, 0.5);
        assert!(grayscale_annotation_mask(&img, 0.04, 0.08).unwrap().is_empty());
    }

    #[test]
    fn bad_order_rejected() {
        let img = RasterImage::filled(8, 8, 1, 0.5);
        assert!(matches!(
            grayscale_annotation_mask(&img, 0.2, 0.1),
            Err(ImagingError::BadThresholdOrder { .. })
        ));
    }

    fn underline_coverage(size: usize, x0: usize, len: usize, row: usize) -> (f64, BinaryMask) {
        let img = RasterImage::from_fn(size, size, 1, |x, y, _| {
            if y == row && (x0..x0 + len).contains(&x) {
                0.0
            } else {
                0.9
            }
        });
        let m = grayscale_annotation_mask(&img, 0.04, 0.08).unwrap();
        let covered = (x0..x0 + len).filter(|&x| m.get(x, row)).count();
        (covered as f64 / len as f64, m)
    }

    #[test]
    fn thin_underline_is_covered() {
        // the filled contour (line plus blur fringe) must stay under 2% of the image
        let (cov, m) = underline_coverage(64, 20, 14, 40);
        assert!(cov >= 0.9, "coverage {cov}");
        assert!((0..64).all(|x| !m.get(x, 20) && !m.get(x, 38)));
        let (cov, _) = underline_coverage(224, 50, 100, 150);
        assert!(cov >= 0.9, "coverage {cov}");
    }

    #[test]
    fn organ_scale_region_is_excluded() {
        let img = RasterImage::from_fn(64, 64, 1, |x, y, _| {
            let (dx, dy) = (x as f32 - 32.0, y as f32 - 32.0);
            if dx * dx + dy * dy < 400.0 {
                0.05
            } else {
                0.8
            }
        });
        assert!(grayscale_annotation_mask(&img, 0.04, 0.08).unwrap().is_empty());
    }
}
