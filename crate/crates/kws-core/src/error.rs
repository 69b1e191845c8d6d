//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wav: {0}")]
    WavFormat(String),

    #[error("audio buffer is empty")]
    EmptyBuffer,

    #[error("buffer must hold exactly {expected} samples, got {got}; apply pad_or_clip first")]
    BadBufferLength { expected: usize, got: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("noise bank is empty; _background_noise_ clips are required")]
    EmptyNoiseBank,

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite gradient in {0}; aborting optimizer step")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("unknown architecture '{0}'; valid names: res15, res15-narrow, res26, res26-narrow, res8, res8-narrow")]
    UnknownArch(String),

    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint version {got} unsupported (expected {expected})")]
    CheckpointVersion { expected: u32, got: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint does not match architecture: {0}")]
    CheckpointMismatch(String),

    #[error("evaluation set is empty")]
    EmptyTestSet,

    #[error("confidence interval needs at least 2 values, got {0}")]
    TooFewTrials(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
