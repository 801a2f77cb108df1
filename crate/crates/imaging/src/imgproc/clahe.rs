//! Contrast-limited adaptive histogram equalization.

use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};
use crate::raster::RasterImage;

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClaheParams {
    /// Clip height as a multiple of the mean bin count (`tile_pixels / 256`).
    pub clip_limit: f32,
    /// Tile grid as `(rows, cols)`.
    pub tile_grid: (usize, usize),
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 2.0,
            tile_grid: (8, 8),
        }
    }
}

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f32).round() as usize).min(BINS - 1)
}

/// Tile boundaries splitting `len` pixels into `n` nearly equal spans.
fn spans(len: usize, n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i * len / n, (i + 1) * len / n)).collect()
}

/// Clipped-histogram equalization per tile, blended bilinearly between the
/// four nearest tile centres.
pub fn clahe(img: &RasterImage, clip_limit: f32, tile_grid: (usize, usize)) -> Result<RasterImage> {
    if img.channels() != 1 {
        return Err(ImagingError::WrongChannelCount {
            expected: 1,
            found: img.channels(),
        });
    }
    let (rows, cols) = tile_grid;
    if rows == 0 || cols == 0 || !(clip_limit > 0.0) {
        return Err(ImagingError::InvalidParameter(format!(
            "clahe needs tiles >= 1 and clip_limit > 0 (got {rows}x{cols}, {clip_limit})"
        )));
    }
    let (w, h) = (img.width(), img.height());
    if w < cols || h < rows {
        return Err(ImagingError::DegenerateImage {
            width: w,
            height: h,
            rows,
            cols,
        });
    }
    let ys = spans(h, rows);
    let xs = spans(w, cols);
    let src = img.data();

    let mut luts = vec![[0f32; BINS]; rows * cols];
    for (ty, &(y0, y1)) in ys.iter().enumerate() {
        for (tx, &(x0, x1)) in xs.iter().enumerate() {
            let mut hist = [0f64; BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(src[y * w + x])] += 1.0;
                }
            }
            // work in histogram fractions so equal distributions give equal maps
            let pixels = ((y1 - y0) * (x1 - x0)) as f64;
            for b in hist.iter_mut() {
                *b /= pixels;
            }
            let clip = clip_limit as f64 / BINS as f64;
            let mut excess = 0.0;
            for b in hist.iter_mut() {
                if *b > clip {
                    excess += *b - clip;
                    *b = clip;
                }
            }
            let bonus = excess / BINS as f64;
            let lut = &mut luts[ty * cols + tx];
            let mut cdf = 0.0;
            for (b, count) in hist.iter().enumerate() {
                cdf += count + bonus;
                lut[b] = cdf.clamp(0.0, 1.0) as f32;
            }
        }
    }

    let centre = |spans: &[(usize, usize)], i: usize| (spans[i].0 + spans[i].1) as f32 / 2.0 - 0.5;
    // neighbouring tile indices and blend weight along one axis
    let locate = |p: usize, spans: &[(usize, usize)]| -> (usize, usize, f32) {
        let pf = p as f32;
        let n = spans.len();
        if pf <= centre(spans, 0) {
            return (0, 0, 0.0);
        }
        if pf >= centre(spans, n - 1) {
            return (n - 1, n - 1, 0.0);
        }
        let mut i = 0;
        while centre(spans, i + 1) < pf {
            i += 1;
        }
        let (c0, c1) = (centre(spans, i), centre(spans, i + 1));
        (i, i + 1, (pf - c0) / (c1 - c0))
    };

    let col_pos: Vec<_> = (0..w).map(|x| locate(x, &xs)).collect();
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (r0, r1, fy) = locate(y, &ys);
        for x in 0..w {
            let (c0, c1, fx) = col_pos[x];
            let b = bin_of(src[y * w + x]);
            let v00 = luts[r0 * cols + c0][b];
            let v01 = luts[r0 * cols + c1][b];
            let v10 = luts[r1 * cols + c0][b];
            let v11 = luts[r1 * cols + c1][b];
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            out[y * w + x] = top + (bottom - top) * fy;
        }
    }
    Ok(RasterImage::from_raw_clamped(w, h, 1, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_stays_constant() {
        let img = RasterImage::filled(40, 30, 1, 0.37);
        let out = clahe(&img, 2.0, (4, 4)).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| v == first));
    }

    #[test]
    fn two_level_image_follows_cdf() {
        // 0.2 on the left half, 0.8 on the right; with no effective clipping
        // the equalization CDF maps them to 0.5 and 1.0.
        let img = RasterImage::from_fn(32, 16, 1, |x, _, _| if x < 16 { 0.2 } else { 0.8 });
        let out = clahe(&img, 1e6, (1, 1)).unwrap();
        assert!((out.get(3, 3, 0) - 0.5).abs() < 1e-6);
        assert!((out.get(20, 3, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_grid() {
        let img = RasterImage::filled(4, 4, 1, 0.5);
        assert!(matches!(
            clahe(&img, 2.0, (8, 8)),
            Err(ImagingError::DegenerateImage { .. })
        ));
        assert!(clahe(&img, 0.0, (1, 1)).is_err());
        assert!(clahe(&img.to_rgb(), 2.0, (1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn output_in_unit_range(seed in 0u32..500, w in 8usize..40, h in 8usize..40) {
            let mut s = seed.wrapping_mul(2654435761).max(1);
            let img = RasterImage::from_fn(w, h, 1, |_, _, _| {
                s ^= s << 13; s ^= s >> 17; s ^= s << 5;
                (s % 1000) as f32 / 999.0
            });
            let out = clahe(&img, 2.0, (4, 4)).unwrap();
            prop_assert_eq!(out.width(), w);
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
