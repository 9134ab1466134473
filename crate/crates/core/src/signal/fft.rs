//! Discrete Fourier transforms.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley-Tukey kernel. Any
//! other length goes through Bluestein's chirp-z reformulation, which
//! evaluates the exact length-`n` DFT with three power-of-two transforms.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Precomputed tables for repeated transforms of one length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2 { twiddles: Vec<Complex64> },
    Bluestein {
        inner: Box<FftPlan>,
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
    },
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(invalid("fft of empty input"));
        }
        if len.is_power_of_two() {
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            return Ok(Self {
                len,
                kind: PlanKind::Radix2 { twiddles },
            });
        }

        let m = (2 * len - 1).next_power_of_two();
        let inner = FftPlan::new(m)?;
        // chirp[n] = exp(-i*pi*n^2/len); n^2 reduced mod 2*len keeps the angle exact.
        let chirp: Vec<Complex64> = (0..len)
            .map(|n| {
                let sq = (n as u128 * n as u128 % (2 * len as u128)) as f64;
                Complex64::from_polar(1.0, -PI * sq / len as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for n in 1..len {
            kernel[n] = chirp[n].conj();
            kernel[m - n] = chirp[n].conj();
        }
        inner.forward_in_place(&mut kernel);
        Ok(Self {
            len,
            kind: PlanKind::Bluestein {
                inner: Box::new(inner),
                chirp,
                kernel_spectrum: kernel,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place forward DFT. `data.len()` must equal the plan length.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len, "buffer length does not match plan");
        match &self.kind {
            PlanKind::Radix2 { twiddles } => radix2(data, twiddles),
            PlanKind::Bluestein {
                inner,
                chirp,
                kernel_spectrum,
            } => {
                let m = inner.len;
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                for (b, (x, c)) in buf.iter_mut().zip(data.iter().zip(chirp)) {
                    *b = x * c;
                }
                inner.forward_in_place(&mut buf);
                for (b, k) in buf.iter_mut().zip(kernel_spectrum) {
                    *b *= k;
                }
                inner.inverse_in_place(&mut buf);
                for (x, (b, c)) in data.iter_mut().zip(buf.iter().zip(chirp)) {
                    *x = b * c;
                }
            }
        }
    }

    /// In-place inverse DFT including the `1/n` normalization.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        for x in data.iter_mut() {
            *x = x.conj();
        }
        self.forward_in_place(data);
        let scale = 1.0 / self.len as f64;
        for x in data.iter_mut() {
            *x = x.conj() * scale;
        }
    }
}

fn radix2(data: &mut [Complex64], twiddles: &[Complex64]) {
    let n = data.len();
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = twiddles[k * step] * data[start + k + half];
                let u = data[start + k];
                data[start + k] = u + t;
                data[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Forward DFT `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.forward_in_place(&mut out);
    Ok(out)
}

/// Inverse DFT, normalized so that `ifft(fft(x)) == x`.
pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.inverse_in_place(&mut out);
    Ok(out)
}
