//! Time-frequency transformation: raw series to log-magnitude spectrogram
//! images.

pub mod fft;
mod image;
mod series;
mod stft;
mod window;

pub use fft::{fft, ifft, FftPlan};
pub use image::{quantize_to_gray, GrayImage};
pub use series::TimeSeries;
pub use stft::{stft, Spectrogram, StftConfig, DEFAULT_LOG_EPSILON};
pub use window::{make_window, WindowKind};

use crate::error::Result;

/// One grayscale spectrogram per channel of `series`.
pub fn series_to_images(series: &TimeSeries, cfg: &StftConfig) -> Result<Vec<GrayImage>> {
    series
        .channels()
        .iter()
        .map(|ch| stft(ch, cfg).map(|s| quantize_to_gray(&s)))
        .collect()
}
