//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to a constructor or operation.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Tensor shape or extent mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Layer used out of protocol (e.g. backward before forward).
    #[error("layer state error: {0}")]
    Layer(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// WAV / audio decoding failure.
    #[error("audio error: {0}")]
    Audio(String),

    /// Dataset metadata failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint encode/decode failure; `offset` is the byte position.
    #[error("checkpoint error at byte {offset}: {msg}")]
    Checkpoint { msg: String, offset: u64 },

    /// Training-run failure.
    #[error("training error: {0}")]
    Training(String),

    /// Statistical analysis failure.
    #[error("stats error: {0}")]
    Stats(String),

    /// Experiment configuration failure.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn layer(msg: impl Into<String>) -> Self {
        Error::Layer(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>, offset: u64) -> Self {
        Error::Checkpoint {
            msg: msg.into(),
            offset,
        }
    }

    pub fn audio(msg: impl Into<String>) -> Self {
        Error::Audio(msg.into())
    }

    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }
}
