//! Few-shot time-series classification with spectrogram augmentation.
//!
//! The pipeline turns each raw series into per-channel log-magnitude STFT
//! images, enlarges the training split with random-erasing variants, and
//! trains a two-branch residual network that fuses a 1-D view of the series
//! with a 2-D view of its spectrogram.

pub mod augment;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod rng;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
