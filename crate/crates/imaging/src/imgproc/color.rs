//! Color-space conversions.

use crate::error::{ImagingError, Result};
use crate::raster::RasterImage;

fn require_rgb(img: &RasterImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(ImagingError::WrongChannelCount {
            expected: 3,
            found: img.channels(),
        });
    }
    Ok(())
}

/// Hexcone HSV of one RGB triple, every component in `[0, 1]`.
///
/// Hue is degrees / 360; achromatic pixels get hue 0.
pub fn hsv_of(r: f32, g: f32, b: f32) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = h / 6.0;
    [if h >= 1.0 { 0.0 } else { h }, s, max]
}

/// Inverse of [`hsv_of`].
pub fn rgb_of_hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGB to HSV, channel order (H, S, V).
pub fn rgb_to_hsv(img: &RasterImage) -> Result<RasterImage> {
    require_rgb(img)?;
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| hsv_of(p[0], p[1], p[2]))
        .collect();
    RasterImage::new(img.width(), img.height(), 3, data)
}

pub fn hsv_to_rgb(img: &RasterImage) -> Result<RasterImage> {
    require_rgb(img)?;
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| rgb_of_hsv(p[0], p[1], p[2]))
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    RasterImage::new(img.width(), img.height(), 3, data)
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// CIELAB L* (D65) of an sRGB triple, scaled from `[0, 100]` to `[0, 1]`.
pub fn lightness_of(r: f32, g: f32, b: f32) -> f32 {
    const DELTA: f64 = 6.0 / 29.0;
    let y = 0.212_672_9 * srgb_to_linear(r as f64)
        + 0.715_152_2 * srgb_to_linear(g as f64)
        + 0.072_175_0 * srgb_to_linear(b as f64);
    let f = if y > DELTA * DELTA * DELTA {
        y.cbrt()
    } else {
        y / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    };
    ((116.0 * f - 16.0) / 100.0).clamp(0.0, 1.0) as f32
}

/// Luminance channel of CIELAB as a single-channel image.
pub fn luminance_lab(img: &RasterImage) -> Result<RasterImage> {
    require_rgb(img)?;
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| lightness_of(p[0], p[1], p[2]))
        .collect();
    RasterImage::new(img.width(), img.height(), 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f32; 3], b: [f32; 3], tol: f32) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn primaries_and_gray() {
        assert_eq!(hsv_of(1.0, 0.0, 0.0), [0.0, 1.0, 1.0]);
        assert!(close(hsv_of(0.0, 1.0, 0.0), [1.0 / 3.0, 1.0, 1.0], 1e-7));
        assert_eq!(hsv_of(0.5, 0.5, 0.5), [0.0, 0.0, 0.5]);
        assert_eq!(hsv_of(0.0, 0.0, 0.0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_channel_count() {
        let gray = RasterImage::filled(2, 2, 1, 0.5);
        assert!(matches!(
            rgb_to_hsv(&gray),
            Err(ImagingError::WrongChannelCount { expected: 3, found: 1 })
        ));
        assert!(luminance_lab(&gray).is_err());
    }

    #[test]
    fn lightness_reference_points() {
        assert_eq!(lightness_of(0.0, 0.0, 0.0), 0.0);
        assert!((lightness_of(1.0, 1.0, 1.0) - 1.0).abs() < 1e-5);
        // sRGB 0.5 -> linear 0.214041 -> f = 0.598 -> L* = 53.389
        assert!((lightness_of(0.5, 0.5, 0.5) - 0.533_89).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn hsv_round_trip(r in 0f32..=1.0, g in 0f32..=1.0, b in 0f32..=1.0) {
            let [h, s, v] = hsv_of(r, g, b);
            prop_assert!((0.0..1.0).contains(&h));
            prop_assert!(close(rgb_of_hsv(h, s, v), [r, g, b], 1e-5));
        }
    }
}
