use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("expected {expected} channel(s), got {found}")]
    WrongChannelCount { expected: usize, found: usize },
    #[error("image {width}x{height} is too small for a {rows}x{cols} tile grid")]
    DegenerateImage {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },
    #[error("low threshold {low} exceeds high threshold {high}")]
    BadThresholdOrder { low: f32, high: f32 },
    #[error("threshold {name}={value} outside [0, 1]")]
    BadThreshold { name: &'static str, value: f32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every pixel is masked; nothing to inpaint from")]
    AllMasked,
    #[error("text detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("invalid image data: {0}")]
    InvalidData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ImagingError>,
    },
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ImagingError {
    pub(crate) fn at(self, stage: &'static str) -> ImagingError {
        ImagingError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, ImagingError>;
