use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

/// Symmetric analysis window of the given length.
///
/// Hann: `w[n] = 0.5 * (1 - cos(2 pi n / (length - 1)))`; a length-1 Hann
/// window is `[1]`.
pub fn make_window(kind: WindowKind, length: usize) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(invalid("window length must be at least 1"));
    }
    Ok(match kind {
        WindowKind::Rectangular => vec![1.0; length],
        WindowKind::Hann if length == 1 => vec![1.0],
        WindowKind::Hann => {
            let denom = (length - 1) as f64;
            (0..length)
                .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
                .collect()
        }
    })
}
