//! Text-region detection behind a pluggable interface.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};
use crate::imgproc::contours::label_components;
use crate::imgproc::morph::white_top_hat;
use crate::raster::{BinaryMask, RasterImage};

/// One detected text box in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextDetection {
    /// `(x, y, w, h)`.
    pub bbox: (usize, usize, usize, usize),
    pub confidence: f32,
    pub text: String,
}

pub trait TextDetector {
    fn detect(&self, gray: &RasterImage) -> Result<Vec<TextDetection>>;
}

/// Runs `detector` and keeps detections with `confidence >= min_confidence`.
///
/// Boxes are clipped to the image and confidences clamped to `[0, 1]`.
pub fn detect_text_regions(
    gray: &RasterImage,
    detector: &dyn TextDetector,
    min_confidence: f32,
) -> Result<Vec<TextDetection>> {
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(ImagingError::BadThreshold {
            name: "min_confidence",
            value: min_confidence,
        });
    }
    if gray.channels() != 1 {
        return Err(ImagingError::WrongChannelCount {
            expected: 1,
            found: gray.channels(),
        });
    }
    let (w, h) = (gray.width(), gray.height());
    let mut out = Vec::new();
    for mut d in detector.detect(gray)? {
        let (x, y, bw, bh) = d.bbox;
        if x >= w || y >= h {
            continue;
        }
        d.bbox = (x, y, bw.min(w - x), bh.min(h - y));
        d.confidence = if d.confidence.is_nan() { 0.0 } else { d.confidence.clamp(0.0, 1.0) };
        if d.confidence >= min_confidence && d.bbox.2 > 0 && d.bbox.3 > 0 {
            out.push(d);
        }
    }
    Ok(out)
}

/// Union of detection boxes as a mask.
pub fn boxes_to_mask(width: usize, height: usize, detections: &[TextDetection]) -> BinaryMask {
    let mut m = BinaryMask::new(width, height);
    for d in detections {
        let (x, y, w, h) = d.bbox;
        m.fill_rect(x, y, w, h);
    }
    m
}

/// Built-in detector for bright overlay glyphs.
///
/// Candidate glyph pixels have a white top-hat of at least `contrast` and a
/// drop of at least `edge_contrast` to some 4-neighbour, which favours the
/// hard edges of rendered text over the soft lobes of speckle. Components of
/// glyph-like size are chained into lines when they share a row band, have
/// comparable heights and sit within `max_gap_ratio·height` of each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicTextDetector {
    pub tophat_radius: usize,
    pub contrast: f32,
    pub edge_contrast: f32,
    pub min_glyph_height: usize,
    pub max_glyph_height: usize,
    pub max_glyph_width: usize,
    pub max_gap_ratio: f32,
}

impl Default for HeuristicTextDetector {
    fn default() -> Self {
        HeuristicTextDetector {
            tophat_radius: 4,
            contrast: 0.4,
            edge_contrast: 0.3,
            min_glyph_height: 5,
            max_glyph_height: 24,
            max_glyph_width: 20,
            max_gap_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    pixels: usize,
    contrast_sum: f32,
    glyphs: usize,
}

impl Blob {
    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    fn joins(&self, other: &Blob, gap_ratio: f32) -> bool {
        let overlap = self.y1.min(other.y1) as isize - self.y0.max(other.y0) as isize + 1;
        let (lo, hi) = (
            self.height().min(other.height()) as f32,
            self.height().max(other.height()) as f32,
        );
        let merged = self.y1.max(other.y1) - self.y0.min(other.y0) + 1;
        if (overlap as f32) < 0.5 * lo || hi > 1.3 * lo || merged as f32 > 1.25 * hi {
            return false;
        }
        let gap = if other.x0 > self.x1 {
            other.x0 - self.x1 - 1
        } else if self.x0 > other.x1 {
            self.x0 - other.x1 - 1
        } else {
            0
        };
        gap as f32 <= gap_ratio * self.height().max(other.height()) as f32
    }

    fn merge(&mut self, o: &Blob) {
        self.x0 = self.x0.min(o.x0);
        self.y0 = self.y0.min(o.y0);
        self.x1 = self.x1.max(o.x1);
        self.y1 = self.y1.max(o.y1);
        self.pixels += o.pixels;
        self.contrast_sum += o.contrast_sum;
        self.glyphs += o.glyphs;
    }
}

impl TextDetector for HeuristicTextDetector {
    fn detect(&self, gray: &RasterImage) -> Result<Vec<TextDetection>> {
        let (w, h) = (gray.width(), gray.height());
        let hat = white_top_hat(gray, self.tophat_radius);
        let bin = BinaryMask::from_fn(w, h, |x, y| {
            if hat.get(x, y, 0) < self.contrast {
                return false;
            }
            let v = gray.get(x, y, 0);
            let drop = |nx: usize, ny: usize| v - gray.get(nx, ny, 0) >= self.edge_contrast;
            (x > 0 && drop(x - 1, y)) || (x + 1 < w && drop(x + 1, y)) || (y > 0 && drop(x, y - 1)) || (y + 1 < h && drop(x, y + 1))
        });
        let (labels, count) = label_components(&bin);
        let mut blobs: Vec<Option<Blob>> = vec![None; count + 1];
        for y in 0..h {
            for x in 0..w {
                let l = labels[y * w + x] as usize;
                if l == 0 {
                    continue;
                }
                let c = hat.get(x, y, 0);
                let b = blobs[l].get_or_insert(Blob {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                    pixels: 0,
                    contrast_sum: 0.0,
                    glyphs: 1,
                });
                b.x0 = b.x0.min(x);
                b.x1 = b.x1.max(x);
                b.y1 = b.y1.max(y);
                b.pixels += 1;
                b.contrast_sum += c;
            }
        }
        let glyph_sized = |b: &Blob| {
            let bh = b.height();
            let bw = b.x1 - b.x0 + 1;
            (self.min_glyph_height..=self.max_glyph_height).contains(&bh) && bw <= self.max_glyph_width
        };
        let mut lines: Vec<Blob> = blobs.into_iter().flatten().filter(glyph_sized).collect();
        // repeatedly merge until no pair joins; small counts keep this cheap
        let mut merged = true;
        while merged {
            merged = false;
            'outer: for i in 0..lines.len() {
                for j in i + 1..lines.len() {
                    if lines[i].joins(&lines[j], self.max_gap_ratio) {
                        let o = lines.remove(j);
                        lines[i].merge(&o);
                        merged = true;
                        break 'outer;
                    }
                }
            }
        }
        lines.sort_by_key(|b| (b.y0, b.x0));
        Ok(lines
            .into_iter()
            .map(|b| {
                let mean = b.contrast_sum / b.pixels as f32;
                let strength = (mean / (2.0 * self.contrast)).clamp(0.0, 1.0);
                let n = b.glyphs as f32;
                TextDetection {
                    bbox: (b.x0, b.y0, b.x1 - b.x0 + 1, b.y1 - b.y0 + 1),
                    confidence: strength * n / (n + 1.0),
                    text: String::new(),
                }
            })
            .collect())
    }
}

/// External engine run as `program [args..] <png-path>`, printing one
/// `x y w h confidence text` line (tab or space separated) per detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTextDetector {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

pub(crate) fn parse_detector_output(text: &str) -> Result<Vec<TextDetection>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(6, ['\t', ' ']).filter(|f| !f.is_empty());
        let mut next_num = |what: &str| -> Result<f64> {
            fields
                .next()
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| ImagingError::InvalidData(format!("detector line {}: bad {what}", lineno + 1)))
        };
        let (x, y, w, h) = (next_num("x")?, next_num("y")?, next_num("w")?, next_num("h")?);
        let confidence = next_num("confidence")? as f32;
        let text = fields.next().unwrap_or("").to_string();
        if x < 0.0 || y < 0.0 || w < 0.0 || h < 0.0 {
            return Err(ImagingError::InvalidData(format!("detector line {}: negative box", lineno + 1)));
        }
        out.push(TextDetection {
            bbox: (x as usize, y as usize, w.ceil() as usize, h.ceil() as usize),
            confidence,
            text,
        });
    }
    Ok(out)
}

impl TextDetector for ExternalTextDetector {
    fn detect(&self, gray: &RasterImage) -> Result<Vec<TextDetection>> {
        let mut file = tempfile::Builder::new().suffix(".png").tempfile()?;
        file.write_all(&gray.encode_png()?)?;
        file.flush()?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(file.path())
            .stdin(Stdio::null())
            .output()
            .map_err(|e| ImagingError::DetectorUnavailable(format!("{}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(ImagingError::DetectorUnavailable(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        parse_detector_output(&String::from_utf8_lossy(&output.stdout))
    }
}
