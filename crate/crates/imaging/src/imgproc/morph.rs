//! Binary morphology with square structuring elements, plus the grayscale
//! opening used for top-hat filtering.

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Dilate,
    Erode,
    Close,
    Open,
}

/// Sliding-window OR (dilate) or AND (erode) along one axis. Outside the
/// image reads as `false` for dilation and `true` for erosion, which keeps
/// erosion and dilation adjoint on the image domain.
fn pass(mask: &BinaryMask, radius: usize, horizontal: bool, dilate: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let (outer, len) = if horizontal { (h, w) } else { (w, h) };
    let mut out = BinaryMask::new(w, h);
    let at = |o: usize, i: usize| if horizontal { (i, o) } else { (o, i) };
    for o in 0..outer {
        // count of `true` (dilate) or `false` (erode) in the window
        let hit = |i: usize| {
            let (x, y) = at(o, i);
            mask.get(x, y) == dilate
        };
        let mut count = (0..radius.min(len.saturating_sub(1)) + 1)
            .filter(|&i| i < len && hit(i))
            .count();
        for i in 0..len {
            let (x, y) = at(o, i);
            let any = count > 0;
            out.set(x, y, if dilate { any } else { !any });
            let enter = i + radius + 1;
            if enter < len && hit(enter) {
                count += 1;
            }
            if i >= radius && hit(i - radius) {
                count -= 1;
            }
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    pass(&pass(mask, radius, true, true), radius, false, true)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    pass(&pass(mask, radius, true, false), radius, false, false)
}

/// Square structuring element of side `2 * radius + 1`. Opening is erosion
/// followed by dilation; closing is dilation followed by erosion.
pub fn morph(mask: &BinaryMask, op: MorphOp, radius: usize) -> BinaryMask {
    match op {
        MorphOp::Dilate => dilate(mask, radius),
        MorphOp::Erode => erode(mask, radius),
        MorphOp::Open => dilate(&erode(mask, radius), radius),
        MorphOp::Close => erode(&dilate(mask, radius), radius),
    }
}

fn gray_filter(img: &RasterImage, radius: usize, take_max: bool) -> RasterImage {
    let (w, h) = (img.width(), img.height());
    let pick = |a: f32, b: f32| if take_max { a.max(b) } else { a.min(b) };
    let src = img.data();
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            tmp[y * w + x] = (lo..=hi).map(|xx| src[y * w + xx]).reduce(pick).unwrap_or(0.0);
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).reduce(pick).unwrap_or(0.0);
        }
    }
    RasterImage::from_raw_clamped(w, h, 1, out)
}

/// Grayscale opening (min filter then max filter) of a single-channel image.
pub fn gray_open(img: &RasterImage, radius: usize) -> RasterImage {
    debug_assert_eq!(img.channels(), 1);
    gray_filter(&gray_filter(img, radius, false), radius, true)
}

/// White top-hat: `img - open(img)`; keeps bright details narrower than the window.
pub fn white_top_hat(img: &RasterImage, radius: usize) -> RasterImage {
    let opened = gray_open(img, radius);
    let data = img.data().iter().zip(opened.data()).map(|(&a, &b)| a - b).collect();
    RasterImage::from_raw_clamped(img.width(), img.height(), 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    #[test]
    fn open_removes_isolated_pixel() {
        let mut m = BinaryMask::new(7, 7);
        m.set(3, 3, true);
        assert!(morph(&m, MorphOp::Open, 1).is_empty());
    }

    #[test]
    fn close_fills_one_pixel_gap() {
        let mut m = BinaryMask::new(5, 1);
        m.set(0, 0, true);
        m.set(2, 0, true);
        let closed = morph(&m, MorphOp::Close, 1);
        assert_eq!(closed.bits(), &[true, true, true, false, false]);
    }

    #[test]
    fn dilate_square() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, 1);
        assert_eq!(d.count(), 9);
        assert!(d.get(1, 1) && d.get(3, 3) && !d.get(0, 0));
    }

    #[test]
    fn top_hat_keeps_thin_bright_line() {
        let img = RasterImage::from_fn(20, 20, 1, |x, _, _| if x == 10 { 0.9 } else { 0.2 });
        let th = white_top_hat(&img, 2);
        assert!((th.get(10, 5, 0) - 0.7).abs() < 1e-6);
        assert!(th.get(4, 5, 0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn opening_and_closing_laws(m in mask_strategy(), r in 1usize..3) {
            let opened = morph(&m, MorphOp::Open, r);
            let closed = morph(&m, MorphOp::Close, r);
            prop_assert!(opened.is_subset_of(&m));
            prop_assert!(m.is_subset_of(&closed));
            prop_assert_eq!(morph(&opened, MorphOp::Open, r), opened.clone());
            prop_assert_eq!(morph(&closed, MorphOp::Close, r), closed.clone());
        }

        #[test]
        fn sliding_window_matches_brute_force(m in mask_strategy(), r in 1usize..3) {
            let d = dilate(&m, r);
            let e = erode(&m, r);
            let ri = r as isize;
            for y in 0..m.height() {
                for x in 0..m.width() {
                    let mut any = false;
                    let mut all = true;
                    for dy in -ri..=ri {
                        for dx in -ri..=ri {
                            let (xx, yy) = (x as isize + dx, y as isize + dy);
                            let inside = xx >= 0 && yy >= 0 && (xx as usize) < m.width() && (yy as usize) < m.height();
                            if inside {
                                let v = m.get(xx as usize, yy as usize);
                                any |= v;
                                all &= v;
                            }
                        }
                    }
                    prop_assert_eq!(d.get(x, y), any);
                    prop_assert_eq!(e.get(x, y), all);
                }
            }
        }
    }
}
