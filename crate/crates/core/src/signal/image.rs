use std::io::{BufRead, Write};
use std::path::Path;

use super::stft::Spectrogram;
use crate::error::{invalid, io_err, Error, Result};

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(invalid(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Encodes as binary PGM (`P5`, maxval 255, single-space separators).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        read_pgm(&mut std::io::Cursor::new(bytes))
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_pgm()).map_err(io_err(path))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_pgm(&bytes).map_err(|e| match e {
            Error::InvalidArgument(reason) => Error::Malformed {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

fn read_pgm<R: BufRead>(r: &mut R) -> Result<GrayImage> {
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)
        .map_err(|_| invalid("truncated PGM header"))?;
    if &magic != b"P5" {
        return Err(invalid("not a binary PGM (expected P5)"));
    }
    let width = header_number(r)?;
    let height = header_number(r)?;
    let maxval = header_number(r)?;
    if maxval == 0 || maxval > 255 {
        return Err(invalid(format!("unsupported PGM maxval {maxval}")));
    }
    let mut pixels = vec![0u8; width * height];
    r.read_exact(&mut pixels)
        .map_err(|_| invalid("truncated PGM raster"))?;
    GrayImage::new(width, height, pixels)
}

/// Reads one ASCII decimal header field, skipping whitespace and `#` comments,
/// and consumes exactly one whitespace byte after it.
fn header_number<R: BufRead>(r: &mut R) -> Result<usize> {
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| invalid("truncated PGM header"))?;
        match byte[0] {
            b'#' => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)
                    .map_err(|_| invalid("truncated PGM comment"))?;
            }
            b if b.is_ascii_whitespace() => {}
            b if b.is_ascii_digit() => break,
            other => return Err(invalid(format!("unexpected byte {other:#04x} in PGM header"))),
        }
    }
    let mut value = (byte[0] - b'0') as usize;
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| invalid("truncated PGM header"))?;
        match byte[0] {
            b if b.is_ascii_digit() => {
                value = value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                    .ok_or_else(|| invalid("PGM header value overflows"))?;
            }
            b if b.is_ascii_whitespace() => return Ok(value),
            other => return Err(invalid(format!("unexpected byte {other:#04x} in PGM header"))),
        }
    }
}

/// Min-max maps a spectrogram onto 0..=255, frequency bin 0 at row 0.
///
/// A constant spectrogram maps to an all-zero image.
pub fn quantize_to_gray(spec: &Spectrogram) -> GrayImage {
    let (lo, hi) = spec
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let pixels = if spec.values.is_empty() || hi <= lo {
        vec![0u8; spec.values.len()]
    } else {
        let scale = 255.0 / (hi - lo);
        spec.values
            .iter()
            .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    GrayImage {
        width: spec.frames,
        height: spec.freq_bins,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: Vec<f64>, bins: usize, frames: usize) -> Spectrogram {
        Spectrogram::from_values(bins, frames, values).unwrap()
    }

    #[test]
    fn constant_spectrogram_is_black() {
        let img = quantize_to_gray(&spec(vec![-3.0; 6], 2, 3));
        assert!(img.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn endpoints_and_midpoint() {
        let img = quantize_to_gray(&spec(vec![0.0, 1.0], 1, 2));
        assert_eq!(img.pixels(), &[0, 255]);
        let img = quantize_to_gray(&spec(vec![0.0, 0.5, 1.0], 1, 3));
        assert_eq!(img.pixels(), &[0, 128, 255]);
    }

    #[test]
    fn orientation_rows_are_bins() {
        // 2 bins x 3 frames; bin 1 is the bright row.
        let img = quantize_to_gray(&spec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, 3));
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get(2, 0), 0);
        assert_eq!(img.get(0, 1), 255);
    }

    #[test]
    fn pgm_exact_bytes() {
        let img = GrayImage::new(2, 1, vec![7, 200]).unwrap();
        assert_eq!(img.to_pgm(), b"P5\n2 1\n255\n\x07\xc8".to_vec());
        assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
    }

    #[test]
    fn pgm_with_comments_and_odd_whitespace() {
        let bytes = b"P5 # made by hand\n3\t1 # w h\n255\n\x00\x0a\xff";
        let img = GrayImage::from_pgm(bytes).unwrap();
        assert_eq!(img.pixels(), &[0, 10, 255]);
    }

    #[test]
    fn pgm_truncated_raster_rejected() {
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(GrayImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
