use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("channel length mismatch: channel {channel} has {len} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        len: usize,
        expected: usize,
    },

    #[error("expected {expected} channel(s), got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("bin count mismatch: expected {expected}, got {got}")]
    BinCount { expected: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("|gamma_s| must be 1, got {0}")]
    NotUnitModulus(f64),

    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("non-finite value in feature '{feature}' at frame {frame}")]
    NonFinite { feature: String, frame: usize },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed feature file: {0}")]
    MalformedFeatureFile(String),

    #[error("sample rate mismatch: file has {actual} Hz, expected {expected} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status used by the command-line tool: 1 for
    /// configuration errors, 2 for I/O and format errors, 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ChannelCount { .. }
            | Error::BinCount { .. }
            | Error::LengthMismatch(..)
            | Error::NotUnitModulus(_) => 1,
            Error::ChannelLengthMismatch { .. }
            | Error::UnsupportedFormat(_)
            | Error::MalformedFeatureFile(_)
            | Error::SampleRateMismatch { .. }
            | Error::Wav { .. }
            | Error::Io(_) => 2,
            Error::NonFinite { .. } | Error::TooFewFrames { .. } => 3,
        }
    }
}
