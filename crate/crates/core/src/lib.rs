//! Simulation of a two-source analog joint source-channel coded sensor link.
//!
//! A microfluidic impedance readout (`x1`) and a slow physiological signal
//! (`x2`) are folded into one voltage by a staircase mapping, sent as an FM
//! tone in an FDMA band, and recovered by a windowed-FFT peak detector
//! followed by modulo decoding and clean-up filters.

use std::fmt;

pub mod codec;
pub mod config;
pub mod error;
pub mod filters;
pub mod link;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod receiver;
pub mod signal;
pub mod source;

pub use codec::{decode, encode, AjsccParams, Folding};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::{ns_sweep, run_pipeline, ReconstructionReport};
pub use signal::{Signal, ValueRange};

/// An [`Error`] tagged with the pipeline stage and the config key that led to it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    /// Dotted config key, empty when no single key is to blame.
    pub config_path: String,
    pub source: Error,
}

impl StageError {
    pub fn new(stage: &'static str, config_path: impl Into<String>, source: Error) -> Self {
        Self {
            stage,
            config_path: config_path.into(),
            source,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}`", self.stage)?;
        if !self.config_path.is_empty() {
            write!(f, " (config `{}`)", self.config_path)?;
        }
        write!(f, ": {}", self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}
