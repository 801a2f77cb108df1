//! Gaussian smoothing, Sobel gradients and Canny edge detection.

use crate::error::{ImagingError, Result};
use crate::raster::{BinaryMask, RasterImage};

/// Gaussian σ used ahead of the Sobel operator.
pub const CANNY_SIGMA: f32 = 1.4;

/// Separable Gaussian blur of a single-channel image, replicated borders.
pub fn gaussian_blur(img: &RasterImage, sigma: f32) -> RasterImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.data();
    let clampi = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wgt) in kernel.iter().enumerate() {
                acc += wgt * src[y as usize * w as usize + clampi(x + k as isize - radius, w)];
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wgt) in kernel.iter().enumerate() {
                acc += wgt * tmp[clampi(y + k as isize - radius, h) * w as usize + x as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    RasterImage::from_raw_clamped(img.width(), img.height(), 1, out)
}

/// Sobel derivatives scaled by 1/8, so they estimate intensity change per pixel.
pub fn sobel(img: &RasterImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.data();
    let at = |x: isize, y: isize| src[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut gx = vec![0f32; src.len()];
    let mut gy = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
        }
    }
    (gx, gy)
}

/// Magnitudes at or below this are rounding noise from the blur.
const GRADIENT_FLOOR: f32 = 1e-6;

/// Canny edges: Gaussian (σ = 1.4), Sobel 3×3, non-maximum suppression and
/// 8-connected hysteresis. Thresholds apply to the per-pixel gradient magnitude.
pub fn canny(img: &RasterImage, low: f32, high: f32) -> Result<BinaryMask> {
    if img.channels() != 1 {
        return Err(ImagingError::WrongChannelCount {
            expected: 1,
            found: img.channels(),
        });
    }
    for (name, value) in [("low", low), ("high", high)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ImagingError::BadThreshold { name, value });
        }
    }
    if low > high {
        return Err(ImagingError::BadThresholdOrder { low, high });
    }
    let (w, h) = (img.width(), img.height());
    let smooth = gaussian_blur(img, CANNY_SIGMA);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let m = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };

    // 0 = none, 1 = weak, 2 = strong
    let mut class = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = mag[i];
            if g <= GRADIENT_FLOOR || g < low {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            // ties broken towards the forward neighbour so plateaus keep one pixel
            if g > m(xi + dx, yi + dy) && g >= m(xi - dx, yi - dy) {
                class[i] = if g >= high { 2 } else { 1 };
            }
        }
    }

    let mut edges = BinaryMask::new(w, h);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| class[i] == 2).collect();
    for &i in &stack {
        edges.set(i % w, i / w, true);
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if class[j] == 1 && !edges.get(nx as usize, ny as usize) {
                    edges.set(nx as usize, ny as usize, true);
                    stack.push(j);
                }
            }
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_no_edges() {
        let img = RasterImage::filled(16, 16, 1, 0.4);
        assert!(canny(&img, 0.0, 0.0).unwrap().is_empty());
        assert!(canny(&img, 0.05, 0.1).unwrap().is_empty());
    }

    #[test]
    fn vertical_step_edge_near_boundary() {
        let c = 16;
        let img = RasterImage::from_fn(32, 32, 1, |x, _, _| if x < c { 0.1 } else { 0.9 });
        let edges = canny(&img, 0.05, 0.1).unwrap();
        let mut hist = vec![0usize; 32];
        for y in 0..32 {
            for x in 0..32 {
                if edges.get(x, y) {
                    hist[x] += 1;
                }
            }
        }
        let total: usize = hist.iter().sum();
        let near: usize = hist[c - 1..=c].iter().sum::<usize>() + hist[c - 2] + hist[c + 1];
        assert!(total >= 32, "{hist:?}");
        let within_one: usize = (c - 1..=c + 1).map(|x| hist[x]).sum();
        assert_eq!(within_one, total, "{hist:?}");
        assert!(near >= total);
    }

    #[test]
    fn threshold_errors() {
        let img = RasterImage::filled(8, 8, 1, 0.5);
        assert!(matches!(canny(&img, 0.5, 0.2), Err(ImagingError::BadThresholdOrder { .. })));
        assert!(matches!(canny(&img, 0.1, 1.5), Err(ImagingError::BadThreshold { .. })));
    }

    #[test]
    fn blur_preserves_constant() {
        let img = RasterImage::filled(9, 7, 1, 0.25);
        let b = gaussian_blur(&img, 1.4);
        assert!(b.data().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
