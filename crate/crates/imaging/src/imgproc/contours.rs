//! Connected components and outer-boundary tracing.

use std::collections::VecDeque;

use crate::raster::BinaryMask;

/// Clockwise 8-neighbourhood starting west, with y pointing down.
const RING: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Closed outer boundary of one 8-connected component, in tracing order.
///
/// Pixels on one-pixel-wide parts of a component are visited twice (once
/// on each side), so `points` may repeat entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
}

impl Contour {
    /// Distinct boundary pixels.
    pub fn unique_points(&self) -> Vec<(usize, usize)> {
        let mut pts = self.points.clone();
        pts.sort_unstable_by_key(|&(x, y)| (y, x));
        pts.dedup();
        pts
    }

    /// Region enclosed by the chain, chain included.
    ///
    /// A 4-connected flood from outside the bounding box cannot cross a
    /// closed 8-connected chain, so everything it fails to reach is inside.
    pub fn filled(&self, width: usize, height: usize) -> BinaryMask {
        let (x0, y0, x1, y1) = self.bbox;
        let bw = x1 - x0 + 3;
        let bh = y1 - y0 + 3;
        let mut wall = vec![false; bw * bh];
        for &(x, y) in &self.points {
            wall[(y - y0 + 1) * bw + (x - x0 + 1)] = true;
        }
        let mut outside = vec![false; bw * bh];
        let mut queue = VecDeque::from([0usize]);
        outside[0] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % bw, i / bw);
            let mut visit = |nx: usize, ny: usize| {
                let j = ny * bw + nx;
                if !outside[j] && !wall[j] {
                    outside[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < bw {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < bh {
                visit(x, y + 1);
            }
        }
        let mut mask = BinaryMask::new(width, height);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !outside[(y - y0 + 1) * bw + (x - x0 + 1)] {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn filled_area(&self, width: usize, height: usize) -> usize {
        self.filled(width, height).count()
    }
}

/// 8-connected component labels (`0` = background, components from 1 in
/// raster order of their first pixel) and the component count.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

fn trace(labels: &[u32], w: usize, h: usize, start: usize) -> Contour {
    let label = labels[start];
    let member = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && labels[y as usize * w + x as usize] == label
    };
    let s = ((start % w) as isize, (start / w) as isize);
    let mut points = vec![(s.0 as usize, s.1 as usize)];
    let (mut p, mut back) = (s, (s.0 - 1, s.1));
    let mut first_move: Option<(isize, isize)> = None;
    loop {
        let offset = (back.0 - p.0, back.1 - p.1);
        let dir_b = RING.iter().position(|&d| d == offset).expect("backtrack is a neighbour");
        let mut found = None;
        for i in 1..=8 {
            let (dx, dy) = RING[(dir_b + i) % 8];
            let q = (p.0 + dx, p.1 + dy);
            if member(q.0, q.1) {
                let (bx, by) = RING[(dir_b + i - 1) % 8];
                found = Some((q, (p.0 + bx, p.1 + by)));
                break;
            }
        }
        let Some((q, nb)) = found else { break };
        if p == s {
            match first_move {
                None => first_move = Some(q),
                Some(f) if f == q => break,
                _ => {}
            }
        }
        p = q;
        back = nb;
        if p != s || first_move.is_none() {
            points.push((p.0 as usize, p.1 as usize));
        }
    }
    // the chain is closed: drop the repeated start if the walk re-entered it
    if points.len() > 1 && points.last() == points.first() {
        points.pop();
    }
    let x0 = points.iter().map(|p| p.0).min().unwrap_or(0);
    let x1 = points.iter().map(|p| p.0).max().unwrap_or(0);
    let y0 = points.iter().map(|p| p.1).min().unwrap_or(0);
    let y1 = points.iter().map(|p| p.1).max().unwrap_or(0);
    Contour {
        points,
        bbox: (x0, y0, x1, y1),
    }
}

/// One outer contour per 8-connected component, ordered by each
/// component's first pixel in raster order.
pub fn extract_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let (labels, count) = label_components(mask);
    let mut seen = vec![false; count + 1];
    let mut contours = Vec::with_capacity(count);
    for i in 0..w * h {
        let l = labels[i] as usize;
        if l != 0 && !seen[l] {
            seen[l] = true;
            contours.push(trace(&labels, w, h, i));
        }
    }
    contours
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn solid_square_boundary_has_eight_pixels() {
        let mut m = BinaryMask::new(7, 7);
        m.fill_rect(2, 2, 3, 3);
        let cs = extract_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].unique_points().len(), 8);
        assert_eq!(cs[0].points.len(), 8);
        assert_eq!(cs[0].filled(7, 7), m);
    }

    #[test]
    fn empty_and_two_squares() {
        assert!(extract_contours(&BinaryMask::new(5, 5)).is_empty());
        let mut m = BinaryMask::new(10, 10);
        m.fill_rect(1, 1, 2, 2);
        m.fill_rect(6, 6, 3, 3);
        assert_eq!(extract_contours(&m).len(), 2);
    }

    #[test]
    fn single_pixel_and_thin_line() {
        let mut m = BinaryMask::new(6, 3);
        m.set(0, 0, true);
        m.fill_rect(1, 2, 5, 1);
        let cs = extract_contours(&m);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].points, vec![(0, 0)]);
        assert_eq!(cs[1].unique_points().len(), 5);
        assert_eq!(cs[1].filled_area(6, 3), 5);
    }

    #[test]
    fn ring_fill_includes_hole() {
        let mut m = BinaryMask::new(8, 8);
        m.fill_rect(1, 1, 5, 5);
        m.set(3, 3, false);
        let cs = extract_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].filled_area(8, 8), 25);
    }

    /// Component plus holes, computed by flooding the complement of the
    /// component itself rather than its traced boundary.
    fn fill_oracle(labels: &[u32], label: u32, w: usize, h: usize) -> BinaryMask {
        let (bw, bh) = (w + 2, h + 2);
        let blocked = |x: usize, y: usize| {
            x >= 1 && y >= 1 && x <= w && y <= h && labels[(y - 1) * w + (x - 1)] == label
        };
        let mut outside = vec![false; bw * bh];
        let mut queue = VecDeque::from([0usize]);
        outside[0] = true;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % bw, i / bw);
            let cand = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in cand {
                if nx < bw && ny < bh && !outside[ny * bw + nx] && !blocked(nx, ny) {
                    outside[ny * bw + nx] = true;
                    queue.push_back(ny * bw + nx);
                }
            }
        }
        BinaryMask::from_fn(w, h, |x, y| !outside[(y + 1) * bw + x + 1])
    }

    proptest! {
        #[test]
        fn one_contour_per_component_and_fill_matches(w in 1usize..14, h in 1usize..14, seed in any::<u64>()) {
            let mut s = seed | 1;
            let m = BinaryMask::from_fn(w, h, |_, _| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s % 5 < 2 });
            let (labels, count) = label_components(&m);
            let cs = extract_contours(&m);
            prop_assert_eq!(cs.len(), count);
            for c in &cs {
                let (x, y) = c.points[0];
                let label = labels[y * w + x];
                prop_assert!(c.points.iter().all(|&(px, py)| labels[py * w + px] == label));
                prop_assert_eq!(c.filled(w, h), fill_oracle(&labels, label, w, h));
            }
        }
    }
}
