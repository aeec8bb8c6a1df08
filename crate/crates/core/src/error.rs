use std::path::PathBuf;

/// Errors produced by the link simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("signal contains a non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("sample rate mismatch: {a} Hz vs {b} Hz")]
    RateMismatch { a: f64, b: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(
        "band plan violation at sample {sample}: instantaneous frequency {freq_hz} Hz \
         outside band [{lo_hz}, {hi_hz}] Hz"
    )]
    BandPlan {
        sample: usize,
        freq_hz: f64,
        lo_hz: f64,
        hi_hz: f64,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
