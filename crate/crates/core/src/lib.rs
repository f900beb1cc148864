//! Toolkit for timbre-oriented spectrogram CNNs: log-mel frontends, a small
//! trainable CNN engine whose first layer mixes many filter shapes,
//! architecture builders, dataset plumbing, training, and evaluation metrics.

pub mod arch;
pub mod audio;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
