use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the enhancement workflow.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} ({left_width}x{left_height} vs {right_width}x{right_height})")]
    DimensionMismatch {
        context: &'static str,
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("input of {width}x{height} is not divisible by {multiple}; pad or resize before the forward pass")]
    NotDivisible {
        width: usize,
        height: usize,
        multiple: usize,
    },

    #[error("window of {window} does not fit a {width}x{height} plane")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("image of {width}x{height} is too small: {reason}")]
    TooSmall {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at batch index {batch_index} (step {step}): {detail}")]
    NonFiniteLoss {
        step: usize,
        batch_index: usize,
        detail: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    ) -> Self {
        Error::DimensionMismatch {
            context,
            left_width: left.0,
            left_height: left.1,
            right_width: right.0,
            right_height: right.1,
        }
    }
}
