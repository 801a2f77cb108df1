//! Synthetic ultrasound-like scans with known annotation overlays.
//!
//! Used as ground truth when testing the cleaning pipeline and as a stand-in
//! corpus for desk-scale training runs.

use usfmae_tensor::Rng;

use crate::imgproc::resize::resize_bilinear;
use crate::raster::{BinaryMask, RasterImage};

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5×7 bitmap font; each row uses the low five bits, MSB on the left.
const FONT: &[(char, [u8; GLYPH_H])] = &[
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
    ('A', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('B', [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
    ('C', [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]),
    ('D', [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C]),
    ('E', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('F', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]),
    ('G', [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F]),
    ('H', [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('I', [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('K', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('L', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('M', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('N', [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11]),
    ('O', [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('P', [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
    ('R', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('S', [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
    ('T', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('U', [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('V', [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04]),
    ('X', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
    ('Z', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F]),
    ('.', [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
    (':', [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00]),
];

fn glyph(c: char) -> Option<&'static [u8; GLYPH_H]> {
    FONT.iter().find(|(k, _)| *k == c.to_ascii_uppercase()).map(|(_, g)| g)
}

/// Pixel size of `text` rendered at `scale` with one blank column between glyphs.
pub fn text_extent(text: &str, scale: usize) -> (usize, usize) {
    let n = text.chars().count();
    if n == 0 {
        return (0, 0);
    }
    ((n * (GLYPH_W + 1) - 1) * scale, GLYPH_H * scale)
}

/// Stamps `text` with its top-left corner at `(x, y)`; returns the inked pixels.
pub fn stamp_text(img: &mut RasterImage, text: &str, x: usize, y: usize, scale: usize, rgb: [f32; 3]) -> BinaryMask {
    let (w, h) = (img.width(), img.height());
    let mut ink = BinaryMask::new(w, h);
    for (k, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = x + k * (GLYPH_W + 1) * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - col) & 1 == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let (px, py) = (gx + col * scale + sx, y + r * scale + sy);
                        if px < w && py < h {
                            ink.set(px, py, true);
                        }
                    }
                }
            }
        }
    }
    paint(img, &ink, rgb);
    ink
}

fn paint(img: &mut RasterImage, mask: &BinaryMask, rgb: [f32; 3]) {
    let ch = img.channels();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.get(x, y) {
                for c in 0..ch {
                    img.set(x, y, c, if ch == 1 { rgb.iter().sum::<f32>() / 3.0 } else { rgb[c] });
                }
            }
        }
    }
}

/// Stroke of side-`thickness` squares stamped along a segment.
pub fn stroke_segment(mask: &mut BinaryMask, a: (f32, f32), b: (f32, f32), thickness: usize) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    let half = (thickness / 2) as isize;
    for s in 0..=steps {
        let t = s as f32 / steps as f32;
        let cx = (a.0 + (b.0 - a.0) * t).round() as isize;
        let cy = (a.1 + (b.1 - a.1) * t).round() as isize;
        for dy in 0..thickness as isize {
            for dx in 0..thickness as isize {
                let (x, y) = (cx - half + dx, cy - half + dy);
                if x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
}

/// Grayscale B-mode-like scan: a sector-shaped field of view, layered
/// tissue echogenicity with a few hypoechoic inclusions, and Rayleigh
/// speckle with a correlation length of a few pixels, log-compressed over a
/// 60 dB display range. Returned as RGB.
pub fn synthetic_scan(size: usize, rng: &mut Rng) -> RasterImage {
    const DYNAMIC_RANGE_DB: f32 = 60.0;
    let s = size as f32;
    let apex = (s * 0.5, -s * 0.15);
    let half_angle = rng.uniform_range(0.55, 0.75) as f32;
    let r_max = s * 1.12;
    // echogenicity in dB below display white
    let base = rng.uniform_range(-38.0, -32.0) as f32;
    let layers: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.uniform_range(0.1, 0.9) as f32 * s,
                rng.uniform_range(0.04, 0.12) as f32 * s,
                rng.uniform_range(-6.0, 8.0) as f32,
            )
        })
        .collect();
    let blobs: Vec<(f32, f32, f32, f32)> = (0..rng.below(3) + 1)
        .map(|_| {
            (
                rng.uniform_range(0.25, 0.75) as f32 * s,
                rng.uniform_range(0.35, 0.8) as f32 * s,
                rng.uniform_range(0.06, 0.14) as f32 * s,
                rng.uniform_range(8.0, 18.0) as f32,
            )
        })
        .collect();
    let grain = (size / 3).max(2);
    let mut coarse = Vec::with_capacity(grain * grain);
    for _ in 0..grain * grain {
        // Rayleigh amplitude normalized to unit mean
        let u = rng.uniform().max(1e-12);
        coarse.push(((-2.0 * u.ln()).sqrt() / (std::f64::consts::PI / 2.0).sqrt()) as f32 / 4.0);
    }
    let speckle = resize_bilinear(&RasterImage::from_fn(grain, grain, 1, |x, y, _| coarse[y * grain + x]), size, size);
    let gain = rng.uniform_range(-2.0, 2.0) as f32;
    RasterImage::from_fn(size, size, 3, |x, y, _| {
        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
        let (dx, dy) = (px - apex.0, py - apex.1);
        let r = (dx * dx + dy * dy).sqrt();
        let theta = dx.atan2(dy);
        if theta.abs() > half_angle || r > r_max || r < s * 0.2 {
            return 0.0;
        }
        let mut db = base + gain - 8.0 * (r / r_max);
        for &(cy, width, delta) in &layers {
            let t = (py - cy) / width;
            db += delta * (-t * t).exp();
        }
        for &(bx, by, br, depth) in &blobs {
            let d = ((px - bx).powi(2) + (py - by).powi(2)).sqrt() / br;
            db -= depth / (1.0 + (6.0 * (d - 1.0)).exp());
        }
        let amp = (4.0 * speckle.get(x, y, 0)).max(1e-4);
        db += 20.0 * amp.log10();
        ((db + DYNAMIC_RANGE_DB) / DYNAMIC_RANGE_DB).clamp(0.0, 0.9)
    })
}

/// Pixels stamped onto a scan by [`inject_annotations`].
#[derive(Debug, Clone)]
pub struct InjectedAnnotations {
    /// Saturated strokes (calipers, arrows, crosshairs).
    pub color: BinaryMask,
    /// Glyph pixels.
    pub glyphs: BinaryMask,
    /// Tight bounding boxes `(x, y, w, h)` of each stamped text line.
    pub text_boxes: Vec<(usize, usize, usize, usize)>,
}

impl InjectedAnnotations {
    /// Ground-truth overlay: strokes plus the text-line boxes.
    pub fn overlay(&self) -> BinaryMask {
        let mut m = self.color.clone();
        for &(x, y, w, h) in &self.text_boxes {
            m.fill_rect(x, y, w, h);
        }
        m
    }
}

const INKS: [[f32; 3]; 6] = [
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.2, 0.6, 1.0],
];

const WORDS: [&str; 8] = ["LIVER", "GAIN 52", "DEPTH 12", "ABD", "RT KIDNEY", "TIS 0.4", "MI 1.1", "FR 24"];

fn random_text(rng: &mut Rng) -> String {
    WORDS[rng.below(WORDS.len())].to_string()
}

/// Stamps saturated caliper/arrow strokes and white text lines onto `img`
/// (modified in place) and returns what was stamped.
pub fn inject_annotations(img: &mut RasterImage, rng: &mut Rng) -> InjectedAnnotations {
    let (w, h) = (img.width(), img.height());
    let (wf, hf) = (w as f32, h as f32);
    let mut color = BinaryMask::new(w, h);
    let mut glyphs = BinaryMask::new(w, h);
    let mut text_boxes = Vec::new();

    let strokes = 1 + rng.below(3);
    for _ in 0..strokes {
        let ink = INKS[rng.below(INKS.len())];
        let mut m = BinaryMask::new(w, h);
        let cx = rng.uniform_range(0.25, 0.75) as f32 * wf;
        let cy = rng.uniform_range(0.3, 0.8) as f32 * hf;
        match rng.below(3) {
            0 => {
                // caliper crosshair
                let arm = rng.uniform_range(0.02, 0.04) as f32 * wf;
                stroke_segment(&mut m, (cx - arm, cy), (cx + arm, cy), 3);
                stroke_segment(&mut m, (cx, cy - arm), (cx, cy + arm), 3);
            }
            1 => {
                // arrow
                let len = rng.uniform_range(0.08, 0.18) as f32 * wf;
                let ang = rng.uniform_range(0.0, std::f64::consts::TAU) as f32;
                let tip = (cx + len * ang.cos(), cy + len * ang.sin());
                stroke_segment(&mut m, (cx, cy), tip, 3);
                let head = len * 0.3;
                for side in [-0.5f32, 0.5] {
                    let a = ang + std::f32::consts::PI + side;
                    stroke_segment(&mut m, tip, (tip.0 + head * a.cos(), tip.1 + head * a.sin()), 3);
                }
            }
            _ => {
                // dotted measurement line
                let len = rng.uniform_range(0.15, 0.3) as f32 * wf;
                let ang = rng.uniform_range(0.0, std::f64::consts::PI) as f32;
                let dashes = 6;
                for d in 0..dashes {
                    let t0 = d as f32 / dashes as f32;
                    let t1 = t0 + 0.5 / dashes as f32;
                    let p = |t: f32| (cx + (t - 0.5) * len * ang.cos(), cy + (t - 0.5) * len * ang.sin());
                    stroke_segment(&mut m, p(t0), p(t1), 3);
                }
            }
        }
        paint(img, &m, ink);
        color = color.union(&m).expect("same dims");
    }

    let lines = 1 + rng.below(2);
    let scale = if w >= 160 { 2 } else { 1 };
    let mut used_rows: Vec<(usize, usize)> = Vec::new();
    for _ in 0..lines {
        let text = random_text(rng);
        let (tw, th) = text_extent(&text, scale);
        if tw + 4 >= w || th + 4 >= h {
            continue;
        }
        let x = 2 + rng.below(w - tw - 3);
        let top_band = rng.bernoulli(0.5);
        let y = if top_band {
            2 + rng.below((h / 6).max(1))
        } else {
            h - th - 2 - rng.below((h / 6).max(1))
        };
        if used_rows.iter().any(|&(a, b)| y < b + 3 && a < y + th + 3) {
            continue;
        }
        used_rows.push((y, y + th));
        let ink = stamp_text(img, &text, x, y, scale, [1.0, 1.0, 1.0]);
        text_boxes.push((x, y, tw, th));
        glyphs = glyphs.union(&ink).expect("same dims");
        // text occludes any stroke beneath it
        for yy in y..y + th {
            for xx in x..x + tw {
                if ink.get(xx, yy) {
                    color.set(xx, yy, false);
                }
            }
        }
    }
    InjectedAnnotations {
        color,
        glyphs,
        text_boxes,
    }
}
