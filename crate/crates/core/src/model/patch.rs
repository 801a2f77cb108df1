use usfmae_tensor::{Rng, Scalar, Tensor};

use super::{ModelError, Result};

/// An image split into N flattened P×P×C tiles, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T: Scalar = f32> {
    /// `[N, P·P·C]`, tiles in row-major grid order.
    pub patches: Tensor<T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

/// Splits a `[C, H, W]` tensor into patches. Within a row the layout is
/// `(py, px, c)`, i.e. the row-major flattening of a P×P×C tile.
pub fn patchify<T: Scalar>(img: &Tensor<T>, patch: usize) -> Result<PatchGrid<T>> {
    let &[c, h, w] = img.shape() else {
        return Err(ModelError::ShapeMismatch(format!(
            "patchify expects [C, H, W], got {:?}",
            img.shape()
        )));
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(ModelError::IndivisibleDims {
            height: h,
            width: w,
            patch,
        });
    }
    let (gh, gw) = (h / patch, w / patch);
    let d = patch * patch * c;
    let src = img.data();
    let mut out = Vec::with_capacity(gh * gw * d);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                for px in 0..patch {
                    let (y, x) = (gy * patch + py, gx * patch + px);
                    for ch in 0..c {
                        out.push(src[(ch * h + y) * w + x]);
                    }
                }
            }
        }
    }
    Ok(PatchGrid {
        patches: Tensor::from_vec(vec![gh * gw, d], out)?,
        channels: c,
        height: h,
        width: w,
        patch,
    })
}

impl<T: Scalar> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_dim(&self) -> usize {
        self.patches.shape()[1]
    }

    /// Reassembles `[C, H, W]` from `rows`, which must have this grid's shape.
    pub fn unpatchify(&self, rows: &Tensor<T>) -> Result<Tensor<T>> {
        if rows.shape() != self.patches.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "unpatchify expects {:?}, got {:?}",
                self.patches.shape(),
                rows.shape()
            )));
        }
        let (c, h, w, p) = (self.channels, self.height, self.width, self.patch);
        let gw = w / p;
        let d = self.patch_dim();
        let src = rows.data();
        let mut out = vec![T::zero(); c * h * w];
        for (i, tile) in src.chunks_exact(d).enumerate() {
            let (gy, gx) = (i / gw, i % gw);
            for py in 0..p {
                for px in 0..p {
                    let (y, x) = (gy * p + py, gx * p + px);
                    for ch in 0..c {
                        out[(ch * h + y) * w + x] = tile[(py * p + px) * c + ch];
                    }
                }
            }
        }
        Ok(Tensor::from_vec(vec![c, h, w], out)?)
    }

    pub fn to_image(&self) -> Result<Tensor<T>> {
        self.unpatchify(&self.patches)
    }
}

/// The masked patch set 𝓜 and its complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    n: usize,
    masked: Vec<usize>,
    visible: Vec<usize>,
}

impl MaskPlan {
    /// Builds a plan from an explicit masked set (any order, no duplicates).
    pub fn from_masked(n: usize, masked: &[usize]) -> Result<Self> {
        let mut is_masked = vec![false; n];
        for &i in masked {
            if i >= n || is_masked[i] {
                return Err(ModelError::ShapeMismatch(format!(
                    "masked index {i} out of range or repeated for N = {n}"
                )));
            }
            is_masked[i] = true;
        }
        let (masked, visible) = (0..n).partition(|&i| is_masked[i]);
        Ok(MaskPlan { n, masked, visible })
    }

    /// Every patch visible.
    pub fn none(n: usize) -> Self {
        MaskPlan {
            n,
            masked: Vec::new(),
            visible: (0..n).collect(),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.n
    }

    /// Sorted masked ids.
    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    /// Sorted visible ids.
    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn num_masked(&self) -> usize {
        self.masked.len()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked.binary_search(&i).is_ok()
    }

    /// Binary N×d matrix with ones on masked rows.
    pub fn matrix<T: Scalar>(&self, d: usize) -> Tensor<T> {
        let mut m = Tensor::zeros(vec![self.n, d]);
        for &i in &self.masked {
            m.data_mut()[i * d..(i + 1) * d].fill(T::one());
        }
        m
    }
}

/// Draws M = floor(ratio·N) patch ids uniformly without replacement.
///
/// # Panics
/// If `ratio` is outside `[0, 1)`.
pub fn sample_mask(n: usize, ratio: f64, rng: &mut Rng) -> MaskPlan {
    assert!((0.0..1.0).contains(&ratio), "mask ratio {ratio} outside [0, 1)");
    let m = (ratio * n as f64).floor() as usize;
    let picked = rng.sample_indices(n, m);
    MaskPlan::from_masked(n, &picked).expect("sampled indices are distinct and in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use usfmae_tensor::Rng;

    #[test]
    fn base_and_small_patch_counts() {
        let img = Tensor::<f32>::zeros(vec![3, 224, 224]);
        let g = patchify(&img, 16).unwrap();
        assert_eq!(g.patches.shape(), &[196, 768]);
        let img = Tensor::<f32>::zeros(vec![3, 32, 32]);
        assert_eq!(patchify(&img, 16).unwrap().len(), 4);
    }

    #[test]
    fn indivisible_rejected() {
        let img = Tensor::<f32>::zeros(vec![3, 30, 32]);
        assert!(matches!(
            patchify(&img, 16),
            Err(ModelError::IndivisibleDims { height: 30, .. })
        ));
    }

    #[test]
    fn row_is_tile_flattening() {
        // 1 channel, 4x4 image, P=2: patch 1 is the top-right tile.
        let img = Tensor::from_fn(vec![1, 4, 4], |i| i as f32);
        let g = patchify(&img, 2).unwrap();
        assert_eq!(g.patches.row(1), &[2.0, 3.0, 6.0, 7.0]);
        // Channels interleave innermost.
        let img = Tensor::from_fn(vec![2, 2, 2], |i| i as f32);
        let g = patchify(&img, 2).unwrap();
        assert_eq!(g.patches.row(0), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn mask_counts() {
        let mut rng = Rng::new(1);
        let plan = sample_mask(196, 0.25, &mut rng);
        assert_eq!(plan.num_masked(), 49);
        assert_eq!(plan.visible().len(), 147);
        let plan = sample_mask(196, 0.0, &mut rng);
        assert_eq!(plan.num_masked(), 0);
        assert_eq!(plan.visible().len(), 196);
    }

    proptest! {
        #[test]
        fn round_trip_exact(c in 1usize..4, gh in 1usize..4, gw in 1usize..4, p in 1usize..5, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let img = Tensor::<f32>::from_fn(vec![c, gh * p, gw * p], |_| rng.normal() as f32);
            let g = patchify(&img, p).unwrap();
            prop_assert_eq!(g.len(), gh * gw);
            prop_assert_eq!(g.to_image().unwrap(), img);
        }

        #[test]
        fn plan_partitions(n in 1usize..300, ratio in 0.0f64..0.99, seed in any::<u64>()) {
            let plan = sample_mask(n, ratio, &mut Rng::new(seed));
            prop_assert_eq!(plan.num_masked(), (ratio * n as f64).floor() as usize);
            let mut all: Vec<usize> = plan.masked().iter().chain(plan.visible()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(plan.visible().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.masked().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
