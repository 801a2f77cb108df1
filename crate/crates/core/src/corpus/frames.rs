use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, DynamicImage};
use serde::{Deserialize, Serialize};
use usfmae_imaging::RasterImage;

use super::{CorpusError, Result};

/// Frame rate assumed for clips whose frame delays are all zero.
const FALLBACK_FPS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSamplingPolicy {
    pub frames_per_second: f64,
}

impl Default for FrameSamplingPolicy {
    fn default() -> Self {
        FrameSamplingPolicy { frames_per_second: 3.0 }
    }
}

impl FrameSamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        check_rate(self.frames_per_second)
    }
}

fn check_rate(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(CorpusError::InvalidFrameRate(fps))
    }
}

/// Indices `floor(k · native_fps / fps)` for k = 0, 1, ... below `n_frames`,
/// with repeats dropped.
pub fn frame_indices(n_frames: usize, native_fps: f64, policy: &FrameSamplingPolicy) -> Result<Vec<usize>> {
    check_rate(native_fps)?;
    policy.validate()?;
    if n_frames == 0 {
        return Err(CorpusError::EmptyVideo);
    }
    let mut out: Vec<usize> = Vec::new();
    for k in 0u64.. {
        let idx = (k as f64 * native_fps / policy.frames_per_second).floor();
        if idx >= n_frames as f64 {
            break;
        }
        let idx = idx as usize;
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<RasterImage>,
    pub fps: f64,
}

pub fn sample_video_frames(clip: &VideoClip, policy: &FrameSamplingPolicy) -> Result<Vec<RasterImage>> {
    let idx = frame_indices(clip.frames.len(), clip.fps, policy)?;
    Ok(idx.into_iter().map(|i| clip.frames[i].clone()).collect())
}

/// A decoded input file.
#[derive(Debug, Clone)]
pub enum Source {
    Still(RasterImage),
    Clip(VideoClip),
}

impl Source {
    /// The still itself, or the clip's sampled frames.
    pub fn into_frames(self, policy: &FrameSamplingPolicy) -> Result<Vec<RasterImage>> {
        match self {
            Source::Still(img) => Ok(vec![img]),
            Source::Clip(clip) => sample_video_frames(&clip, policy),
        }
    }
}

/// Opens an image file. Animated GIFs with more than one frame become clips;
/// their rate is derived from the mean frame delay.
pub fn open_source(path: &Path) -> Result<Source> {
    let is_gif = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gif"));
    if !is_gif {
        return RasterImage::open(path)
            .map(Source::Still)
            .map_err(|e| CorpusError::Image {
                path: path.to_path_buf(),
                source: e,
            });
    }
    let img_err = |e: image::ImageError| CorpusError::Image {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let frames = GifDecoder::new(BufReader::new(file))
        .map_err(img_err)?
        .into_frames()
        .collect_frames()
        .map_err(img_err)?;
    let mut total_ms = 0.0;
    let mut images = Vec::with_capacity(frames.len());
    for f in frames {
        let (num, den) = f.delay().numer_denom_ms();
        total_ms += num as f64 / den.max(1) as f64;
        images.push(RasterImage::from_dynamic(&DynamicImage::ImageRgba8(f.into_buffer())));
    }
    match images.len() {
        0 => Err(CorpusError::EmptyVideo),
        1 => Ok(Source::Still(images.pop().expect("one frame"))),
        n => {
            let fps = if total_ms > 0.0 {
                1000.0 * n as f64 / total_ms
            } else {
                FALLBACK_FPS
            };
            Ok(Source::Clip(VideoClip { frames: images, fps }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn policy(fps: f64) -> FrameSamplingPolicy {
        FrameSamplingPolicy { frames_per_second: fps }
    }

    #[test]
    fn thirty_fps_clip() {
        let idx = frame_indices(90, 30.0, &policy(3.0)).unwrap();
        let expected: Vec<usize> = (0..9).map(|k| k * 30 / 3).collect();
        assert_eq!(idx, expected);
    }

    #[test]
    fn identity_rate_keeps_all() {
        assert_eq!(frame_indices(6, 3.0, &policy(3.0)).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn slow_clip_is_not_upsampled() {
        let mut expected: Vec<usize> = (0..15).map(|k| k / 3).collect();
        expected.dedup();
        assert_eq!(frame_indices(5, 1.0, &policy(3.0)).unwrap(), expected);
    }

    #[test]
    fn errors() {
        assert!(matches!(frame_indices(0, 30.0, &policy(3.0)), Err(CorpusError::EmptyVideo)));
        assert!(matches!(frame_indices(5, 0.0, &policy(3.0)), Err(CorpusError::InvalidFrameRate(_))));
        assert!(matches!(frame_indices(5, 30.0, &policy(-1.0)), Err(CorpusError::InvalidFrameRate(_))));
        let clip = VideoClip { frames: vec![], fps: 30.0 };
        assert!(matches!(sample_video_frames(&clip, &policy(3.0)), Err(CorpusError::EmptyVideo)));
    }

    proptest! {
        #[test]
        fn indices_in_range_and_strictly_increasing(
            n in 1usize..400,
            native in 0.5f64..120.0,
            fps in 0.5f64..60.0,
        ) {
            let idx = frame_indices(n, native, &policy(fps)).unwrap();
            prop_assert_eq!(idx[0], 0);
            prop_assert!(idx.iter().all(|&i| i < n));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            let bound = (n as f64 / native * fps).ceil() as usize + 1;
            prop_assert!(idx.len() <= bound);
        }
    }
}
