use serde::{Deserialize, Serialize};
use usfmae_imaging::imgproc::sample_reflect;
use usfmae_imaging::RasterImage;
use usfmae_tensor::Rng;

use super::{Result, TrainError};

/// Random geometric augmentation applied to pretraining images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotation angle range in degrees.
    pub rotation_degrees: [f64; 2],
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Range of the crop area relative to the image; above 1 zooms out.
    pub crop_scale: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            rotation_degrees: [0.0, 90.0],
            hflip_p: 0.5,
            vflip_p: 0.5,
            crop_scale: [0.5, 2.0],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [r0, r1] = self.rotation_degrees;
        let [s0, s1] = self.crop_scale;
        let ok = r0 <= r1
            && (0.0..=90.0).contains(&r0)
            && (0.0..=90.0).contains(&r1)
            && (0.0..=1.0).contains(&self.hflip_p)
            && (0.0..=1.0).contains(&self.vflip_p)
            && s0 > 0.0
            && s0 <= s1
            && s1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!("augmentation {self:?}")))
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Crop area relative to the image area.
    pub scale: f64,
    /// Crop centre in continuous image coordinates (pixel `i` spans `[i, i+1)`).
    pub center: (f64, f64),
}

impl AugmentParams {
    pub fn identity(width: usize, height: usize) -> Self {
        AugmentParams {
            angle_deg: 0.0,
            hflip: false,
            vflip: false,
            scale: 1.0,
            center: (width as f64 / 2.0, height as f64 / 2.0),
        }
    }

    /// Draws angle, flips, scale and crop centre in that order.
    pub fn sample(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut Rng) -> Self {
        let angle_deg = rng.uniform_range(cfg.rotation_degrees[0], cfg.rotation_degrees[1]);
        let hflip = rng.bernoulli(cfg.hflip_p);
        let vflip = rng.bernoulli(cfg.vflip_p);
        let scale = rng.uniform_range(cfg.crop_scale[0], cfg.crop_scale[1]);
        let side = scale.sqrt();
        // Crop fits inside the image when side < 1 and covers it when side > 1.
        let along = |len: usize, rng: &mut Rng| {
            let len = len as f64;
            let half = side * len / 2.0;
            rng.uniform_range(half, len - half)
        };
        let cx = along(width, rng);
        let cy = along(height, rng);
        AugmentParams {
            angle_deg,
            hflip,
            vflip,
            scale,
            center: (cx, cy),
        }
    }
}

/// Rotation, flips and resized crop drawn from `rng`; output keeps the input size.
pub fn augment(img: &RasterImage, cfg: &AugmentConfig, rng: &mut Rng) -> RasterImage {
    if !cfg.enabled {
        return img.clone();
    }
    let p = AugmentParams::sample(cfg, img.width(), img.height(), rng);
    apply_augment(img, &p)
}

/// Output = crop(flip(rotate(img))), evaluated by inverse mapping each output
/// pixel centre and sampling bilinearly with reflect padding.
pub fn apply_augment(img: &RasterImage, p: &AugmentParams) -> RasterImage {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (wf, hf) = (w as f64, h as f64);
    let side = p.scale.sqrt();
    let (cw, chh) = (side * wf, side * hf);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    let (mx, my) = (wf / 2.0, hf / 2.0);
    let mut out = Vec::with_capacity(w * h * ch);
    for v in 0..h {
        for u in 0..w {
            let mut x = p.center.0 + ((u as f64 + 0.5) / wf - 0.5) * cw;
            let mut y = p.center.1 + ((v as f64 + 0.5) / hf - 0.5) * chh;
            if p.hflip {
                x = wf - x;
            }
            if p.vflip {
                y = hf - y;
            }
            if p.angle_deg != 0.0 {
                let (dx, dy) = (x - mx, y - my);
                x = mx + cos * dx + sin * dy;
                y = my - sin * dx + cos * dy;
            }
            for c in 0..ch {
                out.push(sample_reflect(img, x - 0.5, y - 0.5, c));
            }
        }
    }
    RasterImage::from_raw_clamped(w, h, ch, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> RasterImage {
        RasterImage::from_fn(20, 14, 3, |x, y, c| ((x * 3 + y * 5 + c * 7) % 17) as f32 / 16.0)
    }

    #[test]
    fn identity_params_reproduce_input() {
        let img = ramp();
        let out = apply_augment(&img, &AugmentParams::identity(20, 14));
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn double_hflip_is_identity() {
        let img = ramp();
        let p = AugmentParams {
            hflip: true,
            ..AugmentParams::identity(20, 14)
        };
        let once = apply_augment(&img, &p);
        assert_ne!(once, img);
        assert!((once.get(0, 3, 1) - img.get(19, 3, 1)).abs() <= 1e-6);
        let twice = apply_augment(&once, &p);
        for (a, b) in twice.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn output_dims_match_and_draws_in_range() {
        let img = ramp();
        let cfg = AugmentConfig::default();
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let p = AugmentParams::sample(&cfg, 20, 14, &mut rng);
            assert!((0.0..=90.0).contains(&p.angle_deg));
            assert!((0.5..=2.0).contains(&p.scale));
            let out = apply_augment(&img, &p);
            assert_eq!((out.width(), out.height(), out.channels()), (20, 14, 3));
        }
    }

    #[test]
    fn quarter_turn_moves_corner() {
        // 90 degrees about the centre of a square image maps pixel grid onto itself.
        let img = RasterImage::from_fn(6, 6, 1, |x, y, _| (y * 6 + x) as f32 / 35.0);
        let p = AugmentParams {
            angle_deg: 90.0,
            ..AugmentParams::identity(6, 6)
        };
        let out = apply_augment(&img, &p);
        let mut got: Vec<f32> = out.data().to_vec();
        let mut want: Vec<f32> = img.data().to_vec();
        got.sort_by(f32::total_cmp);
        want.sort_by(f32::total_cmp);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn disabled_returns_clone() {
        let img = ramp();
        let out = augment(&img, &AugmentConfig::disabled(), &mut Rng::new(1));
        assert_eq!(out, img);
    }
}
