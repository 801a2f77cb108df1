//! Dataset manifests, video frame sampling and the batch cleaning driver.
//!
//! Relative paths in a manifest resolve against the manifest's directory.
//! Multi-frame sources (animated GIFs) are treated as clips and sampled under
//! a [`FrameSamplingPolicy`]; every kept frame becomes its own 2D image.

mod batch;
mod frames;
mod manifest;

use std::path::PathBuf;

use thiserror::Error;
use usfmae_imaging::ImagingError;

pub use batch::{run_preprocess_batch, BatchOptions, BatchReport, FileLog, FileStatus};
pub use frames::{frame_indices, open_source, sample_video_frames, FrameSamplingPolicy, Source, VideoClip};
pub use manifest::{
    class_names, load_labeled, load_manifest, load_unlabeled, Manifest, SampleRecord, Split, MANIFEST_HEADER,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest row {row}: missing column `{column}`")]
    MissingColumn { column: String, row: usize },
    #[error("manifest row {row}: duplicate path `{path}`")]
    DuplicatePath { path: String, row: usize },
    #[error("manifest row {row}: split `{value}` is not one of train, val, test")]
    BadSplitValue { value: String, row: usize },
    #[error("manifest row {row}: fold `{value}` is not a non-negative integer")]
    BadFold { value: String, row: usize },
    #[error("manifest row {row}: empty path")]
    EmptyPath { row: usize },
    #[error("manifest row {row}: record `{path}` has no label")]
    MissingLabel { path: String, row: usize },
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("frame rate must be positive and finite, got {0}")]
    InvalidFrameRate(f64),
    #[error("output directory {path} is not writable: {source}")]
    OutputDirUnwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImagingError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;
