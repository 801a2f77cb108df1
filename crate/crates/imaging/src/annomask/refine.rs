//! Mask fusion and morphological clean-up.

use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};
use crate::imgproc::morph::{dilate, morph, MorphOp};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineParams {
    pub open_radius: usize,
    pub close_radius: usize,
    pub dilation_radius: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            open_radius: 1,
            close_radius: 2,
            dilation_radius: 1,
        }
    }
}

fn union_all(masks: &[&BinaryMask]) -> Result<BinaryMask> {
    let first = masks
        .first()
        .ok_or_else(|| ImagingError::InvalidParameter("no masks to fuse".into()))?;
    let mut acc = (*first).clone();
    for m in &masks[1..] {
        if !m.same_dims(first) {
            return Err(ImagingError::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                m.width(),
                m.height(),
                first.width(),
                first.height()
            )));
        }
        acc = acc.union(m)?;
    }
    Ok(acc)
}

/// `close(open(text ∪ color ∪ gray, open_radius), close_radius)`.
pub fn fuse(text: &BinaryMask, color: &BinaryMask, gray: &BinaryMask, open_radius: usize, close_radius: usize) -> Result<BinaryMask> {
    let u = union_all(&[text, color, gray])?;
    let opened = morph(&u, MorphOp::Open, open_radius);
    Ok(morph(&opened, MorphOp::Close, close_radius))
}

/// [`fuse`] followed by a dilation so the inpaint region covers annotation fringes.
pub fn fuse_and_refine(
    text: &BinaryMask,
    color: &BinaryMask,
    gray: &BinaryMask,
    close_radius: usize,
    open_radius: usize,
    dilation_radius: usize,
) -> Result<BinaryMask> {
    Ok(dilate(&fuse(text, color, gray, open_radius, close_radius)?, dilation_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::contours::label_components;

    #[test]
    fn empty_inputs_give_empty() {
        let e = BinaryMask::new(10, 10);
        assert!(fuse_and_refine(&e, &e, &e, 2, 1, 1).unwrap().is_empty());
    }

    #[test]
    fn zero_radii_give_exact_union() {
        let mut a = BinaryMask::new(10, 10);
        let mut b = BinaryMask::new(10, 10);
        let mut c = BinaryMask::new(10, 10);
        a.set(1, 1, true);
        b.fill_rect(4, 4, 2, 1);
        c.set(9, 9, true);
        let u = a.union(&b).unwrap().union(&c).unwrap();
        assert_eq!(fuse_and_refine(&a, &b, &c, 0, 0, 0).unwrap(), u);
    }

    #[test]
    fn closing_bridges_one_pixel_gap() {
        let mut a = BinaryMask::new(16, 9);
        a.fill_rect(2, 3, 5, 3);
        a.fill_rect(8, 3, 5, 3);
        let e = BinaryMask::new(16, 9);
        assert_eq!(label_components(&a).1, 2);
        let fused = fuse_and_refine(&a, &e, &e, 1, 0, 0).unwrap();
        assert_eq!(label_components(&fused).1, 1);
        assert!(fused.get(7, 4));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = BinaryMask::new(4, 4);
        let b = BinaryMask::new(5, 4);
        assert!(matches!(
            fuse_and_refine(&a, &b, &a, 1, 1, 1),
            Err(ImagingError::DimensionMismatch(_))
        ));
    }
}
