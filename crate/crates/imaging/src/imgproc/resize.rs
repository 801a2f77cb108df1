//! Bilinear resampling.

use crate::raster::RasterImage;

/// Linear interpolation written so that `a == b` returns `a` exactly.
#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Source taps and weight for destination index `i` under half-pixel
/// centred mapping `src = (i + 0.5)·in/out − 0.5`, clamped at the border.
fn taps(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let s = ((i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Resizes to `out_w × out_h`. Output dimensions below 1 are raised to 1.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> RasterImage {
    let (out_w, out_h) = (out_w.max(1), out_h.max(1));
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, w, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| taps(y, h, out_h)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..ch {
                let at = |x: usize, y: usize| src[(y * w + x) * ch + c];
                let top = lerp(at(x0, y0), at(x1, y0), tx);
                let bottom = lerp(at(x0, y1), at(x1, y1), tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    RasterImage::from_raw_clamped(out_w, out_h, ch, out)
}

/// Mirrors a continuous coordinate into `[0, n−1]` (edge pixel not repeated).
pub fn reflect_coord(v: f64, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let m = v.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

/// Bilinear sample at pixel-centre coordinates `(x, y)` with reflect padding.
pub fn sample_reflect(img: &RasterImage, x: f64, y: f64, c: usize) -> f32 {
    let (w, h) = (img.width(), img.height());
    let x = reflect_coord(x, w);
    let y = reflect_coord(y, h);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = (x - x0 as f64) as f32;
    let ty = (y - y0 as f64) as f32;
    let top = lerp(img.get(x0, y0, c), img.get(x1, y0, c), tx);
    let bottom = lerp(img.get(x0, y1, c), img.get(x1, y1, c), tx);
    lerp(top, bottom, ty)
}
