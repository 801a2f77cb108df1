//! Transport–diffusion inpainting.
//!
//! Each step moves masked pixels by `dt · (ΔI + a · T)`, where `ΔI` is the
//! 5-point Laplacian and `T` transports the Laplacian along isophotes:
//! `T = (∇ΔI · ∇⊥I / |∇I|) · |∇I|_lim`, with an upwind slope-limited gradient
//! magnitude. Unmasked pixels act as fixed Dirichlet data.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};
use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    pub iterations: usize,
    pub dt: f32,
    /// Weight `a` of the isophote transport term; 0 gives pure diffusion.
    pub anisotropy_weight: f32,
    /// Extra dilation applied by the pipeline before inpainting.
    pub dilation_radius: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            iterations: 300,
            dt: 0.1,
            anisotropy_weight: 0.5,
            dilation_radius: 1,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(ImagingError::InvalidParameter("inpaint iterations must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.25) {
            return Err(ImagingError::InvalidParameter(format!(
                "inpaint dt must lie in (0, 0.25], got {}",
                self.dt
            )));
        }
        if !(self.anisotropy_weight >= 0.0 && self.anisotropy_weight.is_finite()) {
            return Err(ImagingError::InvalidParameter(format!(
                "anisotropy_weight must be >= 0, got {}",
                self.anisotropy_weight
            )));
        }
        Ok(())
    }
}

/// Fills masked pixels; unmasked pixels are copied bit for bit.
pub fn inpaint_ns(img: &RasterImage, mask: &BinaryMask, cfg: &InpaintConfig) -> Result<RasterImage> {
    cfg.validate()?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if mask.width() != w || mask.height() != h {
        return Err(ImagingError::DimensionMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            w,
            h
        )));
    }
    if mask.is_empty() {
        return Ok(img.clone());
    }
    if mask.count() == w * h {
        return Err(ImagingError::AllMasked);
    }
    let source = nearest_source(mask);
    let holes: Vec<usize> = (0..w * h).filter(|&i| mask.bits()[i]).collect();
    // Laplacian is needed on the holes and their 4-neighbours
    let mut lap_at = vec![false; w * h];
    for &i in &holes {
        let (x, y) = (i % w, i / w);
        lap_at[i] = true;
        for (nx, ny) in neighbours4(x, y, w, h) {
            lap_at[ny * w + nx] = true;
        }
    }
    let lap_pixels: Vec<usize> = (0..w * h).filter(|&i| lap_at[i]).collect();

    let mut out = img.data().to_vec();
    let mut u = vec![0f32; w * h];
    let mut lap = vec![0f32; w * h];
    let mut next = vec![0f32; holes.len()];
    for c in 0..ch {
        for i in 0..w * h {
            u[i] = img.data()[source[i] * ch + c];
        }
        for _ in 0..cfg.iterations {
            for &i in &lap_pixels {
                let (x, y) = (i % w, i / w);
                let at = |xx: usize, yy: usize| u[yy * w + xx];
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
                lap[i] = at(xm, y) + at(xp, y) + at(x, ym) + at(x, yp) - 4.0 * u[i];
            }
            for (k, &i) in holes.iter().enumerate() {
                let (x, y) = (i % w, i / w);
                let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let mut delta = lap[i];
                if cfg.anisotropy_weight > 0.0 {
                    let l = |xx: usize, yy: usize| lap[yy * w + xx];
                    let at = |xx: usize, yy: usize| u[yy * w + xx];
                    let dlx = 0.5 * (l(xp, y) - l(xm, y));
                    let dly = 0.5 * (l(x, yp) - l(x, ym));
                    let ux = 0.5 * (at(xp, y) - at(xm, y));
                    let uy = 0.5 * (at(x, yp) - at(x, ym));
                    let norm = (ux * ux + uy * uy).sqrt();
                    if norm > 1e-8 {
                        let beta = (dlx * -uy + dly * ux) / norm;
                        let (bx, fx) = (u[i] - at(xm, y), at(xp, y) - u[i]);
                        let (by, fy) = (u[i] - at(x, ym), at(x, yp) - u[i]);
                        let grad = if beta > 0.0 {
                            (bx.min(0.0).powi(2) + fx.max(0.0).powi(2) + by.min(0.0).powi(2) + fy.max(0.0).powi(2)).sqrt()
                        } else {
                            (bx.max(0.0).powi(2) + fx.min(0.0).powi(2) + by.max(0.0).powi(2) + fy.min(0.0).powi(2)).sqrt()
                        };
                        delta += cfg.anisotropy_weight * beta * grad;
                    }
                }
                next[k] = u[i] + cfg.dt * delta;
            }
            for (k, &i) in holes.iter().enumerate() {
                u[i] = next[k];
            }
        }
        for &i in &holes {
            let v = u[i];
            out[i * ch + c] = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }
    RasterImage::new(w, h, ch, out)
}

fn neighbours4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (x.wrapping_sub(1), y),
        (x + 1, y),
        (x, y.wrapping_sub(1)),
        (x, y + 1),
    ];
    cand.into_iter().filter(move |&(a, b)| a < w && b < h)
}

/// For every pixel, the index of the unmasked pixel whose value seeds it:
/// itself when unmasked, otherwise the 4-connected breadth-first nearest one.
fn nearest_source(mask: &BinaryMask) -> Vec<usize> {
    let (w, h) = (mask.width(), mask.height());
    let mut src = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, &masked) in mask.bits().iter().enumerate() {
        if !masked {
            src[i] = i;
            let (x, y) = (i % w, i / w);
            if neighbours4(x, y, w, h).any(|(a, b)| mask.get(a, b)) {
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        for (a, b) in neighbours4(x, y, w, h) {
            let j = b * w + a;
            if src[j] == usize::MAX {
                src[j] = src[i];
                queue.push_back(j);
            }
        }
    }
    src
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square_mask(w: usize, h: usize, x: usize, y: usize, s: usize) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        m.fill_rect(x, y, s, s);
        m
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = RasterImage::from_fn(9, 7, 3, |x, y, c| (x + y + c) as f32 / 20.0);
        assert_eq!(inpaint_ns(&img, &BinaryMask::new(9, 7), &InpaintConfig::default()).unwrap(), img);
    }

    #[test]
    fn all_masked_rejected() {
        let img = RasterImage::filled(4, 4, 1, 0.3);
        let mut m = BinaryMask::new(4, 4);
        m.fill_rect(0, 0, 4, 4);
        assert!(matches!(inpaint_ns(&img, &m, &InpaintConfig::default()), Err(ImagingError::AllMasked)));
    }

    #[test]
    fn constant_fill() {
        let img = RasterImage::filled(32, 32, 3, 0.6);
        let out = inpaint_ns(&img, &square_mask(32, 32, 8, 10, 12), &InpaintConfig::default()).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-3));
    }

    #[test]
    fn ramp_fill_tracks_plane() {
        let img = RasterImage::from_fn(48, 48, 1, |x, _, _| x as f32 / 47.0);
        let mask = square_mask(48, 48, 20, 20, 8);
        let out = inpaint_ns(&img, &mask, &InpaintConfig::default()).unwrap();
        for y in 20..28 {
            for x in 20..28 {
                assert!((out.get(x, y, 0) - x as f32 / 47.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn rejects_unstable_step() {
        let img = RasterImage::filled(4, 4, 1, 0.3);
        let cfg = InpaintConfig { dt: 0.3, ..Default::default() };
        assert!(inpaint_ns(&img, &square_mask(4, 4, 1, 1, 1), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn unmasked_untouched_and_bounded(seed in any::<u64>(), mx in 2usize..10, my in 2usize..10, s in 1usize..6) {
            let mut st = seed | 1;
            let img = RasterImage::from_fn(16, 16, 1, |_, _, _| { st ^= st << 13; st ^= st >> 7; st ^= st << 17; (st % 1000) as f32 / 999.0 });
            let mask = square_mask(16, 16, mx, my, s);
            let cfg = InpaintConfig { anisotropy_weight: 0.0, iterations: 100, ..Default::default() };
            let out = inpaint_ns(&img, &mask, &cfg).unwrap();
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for y in 0..16 {
                for x in 0..16 {
                    if mask.get(x, y) {
                        continue;
                    }
                    prop_assert_eq!(out.get(x, y, 0).to_bits(), img.get(x, y, 0).to_bits());
                    if neighbours4(x, y, 16, 16).any(|(a, b)| mask.get(a, b)) {
                        lo = lo.min(img.get(x, y, 0));
                        hi = hi.max(img.get(x, y, 0));
                    }
                }
            }
            for y in 0..16 {
                for x in 0..16 {
                    if mask.get(x, y) {
                        let v = out.get(x, y, 0);
                        prop_assert!(v >= lo - 1e-3 && v <= hi + 1e-3);
                    }
                }
            }
        }
    }
}
