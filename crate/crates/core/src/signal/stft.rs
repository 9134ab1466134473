use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::FftPlan;
use super::window::{make_window, WindowKind};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_LOG_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    /// Samples shared by adjacent windows.
    pub overlap: usize,
    #[serde(default)]
    pub window_kind: WindowKind,
    #[serde(default = "default_log_epsilon")]
    pub log_epsilon: f64,
}

fn default_log_epsilon() -> f64 {
    DEFAULT_LOG_EPSILON
}

impl StftConfig {
    pub fn new(window_length: usize, overlap: usize) -> Self {
        Self {
            window_length,
            overlap,
            window_kind: WindowKind::Hann,
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }

    /// Overlap given as a fraction of the window, rounded to whole samples.
    pub fn with_overlap_fraction(window_length: usize, fraction: f64) -> Self {
        Self::new(window_length, (fraction * window_length as f64).round() as usize)
    }

    pub fn window_kind(mut self, kind: WindowKind) -> Self {
        self.window_kind = kind;
        self
    }

    pub fn hop(&self) -> usize {
        self.window_length - self.overlap
    }

    pub fn freq_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// `floor((n - l) / hop) + 1`, or `None` when the series is shorter than a window.
    pub fn frames_for(&self, n: usize) -> Option<usize> {
        (n >= self.window_length).then(|| (n - self.window_length) / self.hop() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.overlap < 1 || self.overlap >= self.window_length {
            return Err(invalid(format!(
                "overlap must satisfy 1 <= overlap < window_length (got {} for window {})",
                self.overlap, self.window_length
            )));
        }
        if self.log_epsilon.is_nan() || self.log_epsilon <= 0.0 {
            return Err(invalid("log_epsilon must be positive"));
        }
        Ok(())
    }
}

/// Log-magnitude short-time spectrum, stored bin-major (`values[bin * frames + frame]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub freq_bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl Spectrogram {
    pub fn from_values(freq_bins: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != freq_bins * frames {
            return Err(invalid("spectrogram value count does not match dimensions"));
        }
        Ok(Self {
            freq_bins,
            frames,
            values,
        })
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    /// Bin holding the largest value in `frame` (first on ties).
    pub fn peak_bin(&self, frame: usize) -> usize {
        (0..self.freq_bins).fold(0, |best, k| {
            if self.get(k, frame) > self.get(best, frame) {
                k
            } else {
                best
            }
        })
    }
}

/// One-sided log-magnitude STFT of a single channel.
///
/// Frame `m` covers `x[m*hop .. m*hop + l)`; bin `k` in `0..=l/2` is the exact
/// length-`l` DFT coefficient, and the stored value is `ln(|X| + eps)`.
pub fn stft(series: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let l = cfg.window_length;
    let frames = cfg.frames_for(series.len()).ok_or(Error::SeriesTooShort {
        len: series.len(),
        window: l,
    })?;
    let window = make_window(cfg.window_kind, l)?;
    let plan = FftPlan::new(l)?;
    let bins = cfg.freq_bins();
    let hop = cfg.hop();

    let mut values = vec![0.0; bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for m in 0..frames {
        let seg = &series[m * hop..m * hop + l];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        plan.forward_in_place(&mut buf);
        for (k, coeff) in buf.iter().take(bins).enumerate() {
            values[k * frames + m] = (coeff.norm() + cfg.log_epsilon).ln();
        }
    }
    Ok(Spectrogram {
        freq_bins: bins,
        frames,
        values,
    })
}
