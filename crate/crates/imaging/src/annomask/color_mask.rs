//! Saturated-ink detection by K-means in HSV.

use usfmae_tensor::Rng;

use crate::error::{ImagingError, Result};
use crate::imgproc::color::hsv_of;
use crate::raster::{BinaryMask, RasterImage};

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-6;

type Feature = [f64; 4];

fn dist2(a: &Feature, b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of Lloyd's algorithm on a feature set.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Feature>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// k-means++ seeding followed by Lloyd iterations until no centroid moves
/// more than `TOL` or `MAX_ITERS` is reached. `k` is capped at the number
/// of points.
pub fn kmeans(points: &[Feature], k: usize, seed: u64) -> KMeans {
    let k = k.min(points.len()).max(1);
    if points.is_empty() {
        return KMeans {
            centroids: Vec::new(),
            assignment: Vec::new(),
            iterations: 0,
        };
    }
    let mut rng = Rng::new(seed);
    let mut centroids = vec![points[rng.below(points.len())]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total <= 0.0 {
            // every point coincides with a centroid already
            points[rng.below(points.len())]
        } else {
            let mut target = rng.uniform() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            points[pick]
        };
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(dist2(p, &next));
        }
        centroids.push(next);
    }

    let mut assignment = vec![0usize; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            *a = best.1;
        }
        let mut sums = vec![[0f64; 4]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for d in 0..4 {
                sums[a][d] += p[d];
            }
        }
        let mut shift = 0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue; // empty cluster keeps its centroid
            }
            let new: Feature = std::array::from_fn(|d| sums[j][d] / counts[j] as f64);
            shift = shift.max(dist2(&new, &centroids[j]).sqrt());
            centroids[j] = new;
        }
        if shift <= TOL {
            break;
        }
    }
    KMeans {
        centroids,
        assignment,
        iterations,
    }
}

/// Annotation ink: pixels with saturation at least `saturation_floor`,
/// clustered on `(sin H, cos H, S, V)`; clusters whose mean saturation
/// reaches the floor and whose mean value reaches `value_floor` are marked.
///
/// The value floor drops clusters of near-black pixels, whose hue and
/// saturation are dominated by quantization noise.
pub fn color_annotation_mask_with(
    img: &RasterImage,
    saturation_floor: f32,
    value_floor: f32,
    k: usize,
    seed: u64,
) -> Result<BinaryMask> {
    if img.channels() != 3 {
        return Err(ImagingError::WrongChannelCount {
            expected: 3,
            found: img.channels(),
        });
    }
    if k < 2 {
        return Err(ImagingError::InvalidParameter(format!("k-means needs k >= 2, got {k}")));
    }
    for (name, value) in [("saturation_floor", saturation_floor), ("value_floor", value_floor)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ImagingError::BadThreshold { name, value });
        }
    }
    let (w, h) = (img.width(), img.height());
    let mut idx = Vec::new();
    let mut feats = Vec::new();
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let [hue, s, v] = hsv_of(px[0], px[1], px[2]);
        if s >= saturation_floor && s > 0.0 {
            let angle = std::f64::consts::TAU * hue as f64;
            idx.push(i);
            feats.push([angle.sin(), angle.cos(), s as f64, v as f64]);
        }
    }
    let mut mask = BinaryMask::new(w, h);
    if feats.is_empty() {
        return Ok(mask);
    }
    let km = kmeans(&feats, k, seed);
    let kk = km.centroids.len();
    let mut sums = vec![(0f64, 0f64, 0usize); kk];
    for (&a, f) in km.assignment.iter().zip(&feats) {
        sums[a].0 += f[2];
        sums[a].1 += f[3];
        sums[a].2 += 1;
    }
    let marked: Vec<bool> = sums
        .iter()
        .map(|&(s, v, n)| n > 0 && s / n as f64 >= saturation_floor as f64 && v / n as f64 >= value_floor as f64)
        .collect();
    for (&i, &a) in idx.iter().zip(&km.assignment) {
        if marked[a] {
            mask.set(i % w, i / w, true);
        }
    }
    Ok(mask)
}

/// [`color_annotation_mask_with`] using the default value floor.
pub fn color_annotation_mask(img: &RasterImage, saturation_floor: f32, k: usize, seed: u64) -> Result<BinaryMask> {
    color_annotation_mask_with(img, saturation_floor, super::DEFAULT_VALUE_FLOOR, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_with(strokes: &[((usize, usize, usize, usize), [f32; 3])]) -> (RasterImage, BinaryMask) {
        let mut truth = BinaryMask::new(40, 30);
        let img = RasterImage::from_fn(40, 30, 3, |x, y, c| {
            for &((x0, y0, w, h), rgb) in strokes {
                if (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y) {
                    return rgb[c];
                }
            }
            ((x * 13 + y * 7) % 10) as f32 / 20.0 + 0.2
        });
        for &((x0, y0, w, h), _) in strokes {
            truth.fill_rect(x0, y0, w, h);
        }
        (img, truth)
    }

    #[test]
    fn grayscale_gives_empty_mask() {
        let (img, _) = gray_with(&[]);
        assert!(color_annotation_mask(&img, 0.35, 3, 1).unwrap().is_empty());
    }

    #[test]
    fn green_stroke_is_exact() {
        let (img, truth) = gray_with(&[((5, 10, 20, 3), [0.0, 1.0, 0.0])]);
        assert_eq!(color_annotation_mask(&img, 0.35, 3, 1).unwrap(), truth);
    }

    #[test]
    fn red_and_yellow_separate_by_hue() {
        let strokes = [((2, 2, 30, 2), [1.0, 0.0, 0.0]), ((2, 20, 30, 2), [1.0, 1.0, 0.0])];
        let (img, truth) = gray_with(&strokes);
        assert_eq!(color_annotation_mask(&img, 0.35, 2, 5).unwrap(), truth);
        let feats: Vec<Feature> = [[1.0f32, 0.0, 0.0], [1.0, 1.0, 0.0]]
            .iter()
            .flat_map(|rgb| {
                let [h, s, v] = hsv_of(rgb[0], rgb[1], rgb[2]);
                let a = std::f64::consts::TAU * h as f64;
                std::iter::repeat([a.sin(), a.cos(), s as f64, v as f64]).take(60)
            })
            .collect();
        let km = kmeans(&feats, 2, 5);
        assert!(dist2(&km.centroids[0], &km.centroids[1]) > 0.5);
        assert_ne!(km.assignment[0], km.assignment[60]);
    }

    #[test]
    fn dark_noise_cluster_is_dropped() {
        let (img, truth) = gray_with(&[((0, 0, 10, 10), [0.03, 0.0, 0.0]), ((20, 20, 10, 3), [0.0, 0.0, 1.0])]);
        let m = color_annotation_mask(&img, 0.35, 3, 2).unwrap();
        let mut blue = BinaryMask::new(40, 30);
        blue.fill_rect(20, 20, 10, 3);
        assert_eq!(m, blue);
        assert!(m.is_subset_of(&truth));
    }

    #[test]
    fn deterministic_for_seed() {
        let (img, _) = gray_with(&[((5, 5, 10, 4), [0.9, 0.2, 0.7]), ((5, 15, 10, 4), [0.1, 0.8, 0.9])]);
        assert_eq!(
            color_annotation_mask(&img, 0.35, 3, 9).unwrap(),
            color_annotation_mask(&img, 0.35, 3, 9).unwrap()
        );
    }
}
