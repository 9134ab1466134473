use std::path::Path;

use crate::error::{invalid, io_err, Error, Result};

/// A multichannel real-valued sequence, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub label: Option<usize>,
}

impl TimeSeries {
    pub fn new(channels: Vec<Vec<f64>>) -> Result<Self> {
        let len = channels.first().map(Vec::len).unwrap_or(0);
        if len == 0 {
            return Err(invalid("time series needs at least one channel and one sample"));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(invalid("all channels must share one length"));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("time series contains non-finite values"));
        }
        Ok(Self {
            channels,
            sample_rate: 1.0,
            label: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// CSV text: header `ch0,ch1,...`, then one row per time step.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record((0..self.num_channels()).map(|c| format!("ch{c}")))?;
        for t in 0..self.len() {
            w.write_record(self.channels.iter().map(|ch| ch[t].to_string()))?;
        }
        w.into_inner()
            .map_err(|e| invalid(format!("csv flush failed: {e}")))
    }

    /// Parses CSV with one column per channel; a first row that does not
    /// parse as numbers is treated as a header.
    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let mut channels: Vec<Vec<f64>> = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(invalid(format!("row {row}: {e}"))),
            };
            if channels.is_empty() {
                channels = vec![Vec::new(); values.len()];
            }
            if values.len() != channels.len() {
                return Err(invalid(format!(
                    "row {row} has {} columns, expected {}",
                    values.len(),
                    channels.len()
                )));
            }
            for (ch, v) in channels.iter_mut().zip(values) {
                ch.push(v);
            }
        }
        Self::new(channels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_csv(&bytes).map_err(|e| match e {
            Error::InvalidArgument(reason) => Error::Malformed {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}
