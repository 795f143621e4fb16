//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("luminance plane is empty")]
    EmptyPlane,

    #[error("mask is empty")]
    EmptyMask,

    #[error("dataset contains no usable scenes")]
    EmptyDataset,

    #[error("{axis} extent {extent} must be even for 2x2 pooling")]
    OddExtent { axis: &'static str, extent: usize },

    #[error("{axis} extent {extent} is not divisible by {divisor}")]
    IndivisibleExtent {
        axis: &'static str,
        extent: usize,
        divisor: usize,
    },

    #[error("ground truth contains non-binary value {0}")]
    NonBinaryGroundTruth(f64),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
    },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap an `io::Error` with the path it occurred on, mapping missing
    /// files to the dedicated variant.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
