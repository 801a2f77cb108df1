//! Channel-wise mean/std normalization into channel-first tensors.

use serde::{Deserialize, Serialize};
use usfmae_tensor::Tensor;

use crate::error::{ImagingError, Result};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationSpec {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        NormalizationSpec {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(ImagingError::InvalidParameter(format!(
                "normalization std must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }
}

/// `(x − mean[c]) / std[c]` laid out as `[3, H, W]`.
pub fn normalize(img: &RasterImage, spec: &NormalizationSpec) -> Result<Tensor<f32>> {
    if img.channels() != 3 {
        return Err(ImagingError::WrongChannelCount {
            expected: 3,
            found: img.channels(),
        });
    }
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    let plane = w * h;
    let src = img.data();
    let t = Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        (src[p * 3 + c] - spec.mean[c]) / spec.std[c]
    });
    Ok(t)
}

/// Inverse of [`normalize`], clamped back into `[0, 1]`.
pub fn denormalize(t: &Tensor<f32>, spec: &NormalizationSpec) -> Result<RasterImage> {
    let [c, h, w] = t.shape() else {
        return Err(ImagingError::DimensionMismatch(format!(
            "expected [3, H, W], got {:?}",
            t.shape()
        )));
    };
    if *c != 3 {
        return Err(ImagingError::WrongChannelCount { expected: 3, found: *c });
    }
    let (h, w) = (*h, *w);
    let plane = w * h;
    let d = t.data();
    let data = (0..plane * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            d[c * plane + p] * spec.std[c] + spec.mean[c]
        })
        .collect();
    Ok(RasterImage::from_raw_clamped(w, h, 3, data))
}
