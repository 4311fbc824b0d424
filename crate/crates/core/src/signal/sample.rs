use serde::{Deserialize, Serialize};

use super::{Result, SignalError};

/// Labeled multichannel signal, channel-major `C × T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    pub data: Vec<f64>,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub label: usize,
    pub subject_id: String,
}

impl TimeSeriesSample {
    pub fn new(
        data: Vec<f64>,
        n_channels: usize,
        sample_rate_hz: f64,
        label: usize,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if n_channels == 0 || data.is_empty() || data.len() % n_channels != 0 {
            return Err(SignalError::Data(format!(
                "{} values cannot form {n_channels} non-empty channels",
                data.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(SignalError::Config(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(TimeSeriesSample {
            data,
            n_channels,
            sample_rate_hz,
            label,
            subject_id: subject_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        let t = self.len();
        &self.data[i * t..(i + 1) * t]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.len())
    }

    /// Applies `f` to every channel and keeps the other fields.
    pub fn map_channels<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        let mut data = Vec::new();
        let mut len = None;
        for ch in self.channels() {
            let y = f(ch)?;
            if *len.get_or_insert(y.len()) != y.len() {
                return Err(SignalError::Data(
                    "channels mapped to different lengths".into(),
                ));
            }
            data.extend(y);
        }
        Ok(TimeSeriesSample {
            data,
            ..self.clone()
        })
    }
}

/// A whole-night style recording with one label per fixed-length epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub data: Vec<f64>,
    pub n_channels: usize,
    pub sample_rate_hz: f64,
    pub epoch_labels: Vec<usize>,
    pub subject_id: String,
}

/// Cuts a record into non-overlapping, label-aligned epochs of `epoch_s`
/// seconds. A trailing partial epoch is dropped; a record shorter than one
/// epoch yields no samples.
pub fn epoch_segment(record: &Record, epoch_s: f64) -> Result<Vec<TimeSeriesSample>> {
    if record.n_channels == 0 || record.data.len() % record.n_channels != 0 {
        return Err(SignalError::Data(
            "record data is not channel-aligned".into(),
        ));
    }
    let epoch_len = (epoch_s * record.sample_rate_hz).round() as usize;
    if epoch_len == 0 {
        return Err(SignalError::Config(format!(
            "epoch of {epoch_s} s at {} Hz has no samples",
            record.sample_rate_hz
        )));
    }
    let total = record.data.len() / record.n_channels;
    let n_epochs = total / epoch_len;
    if n_epochs == 0 {
        return Ok(Vec::new());
    }
    if record.epoch_labels.len() != n_epochs {
        return Err(SignalError::Data(format!(
            "{} labels for {n_epochs} epochs",
            record.epoch_labels.len()
        )));
    }
    record
        .epoch_labels
        .iter()
        .enumerate()
        .map(|(e, &label)| {
            let mut data = Vec::with_capacity(record.n_channels * epoch_len);
            for c in 0..record.n_channels {
                let start = c * total + e * epoch_len;
                data.extend_from_slice(&record.data[start..start + epoch_len]);
            }
            TimeSeriesSample::new(
                data,
                record.n_channels,
                record.sample_rate_hz,
                label,
                record.subject_id.clone(),
            )
        })
        .collect()
}

/// Non-overlapping windows of one sample: `C × p × t`, `p = ⌊T / t⌋`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub data: Vec<f64>,
    pub n_channels: usize,
    pub n_patches: usize,
    pub patch_len: usize,
}

impl PatchGrid {
    pub fn shape(&self) -> [usize; 3] {
        [self.n_channels, self.n_patches, self.patch_len]
    }

    pub fn patch(&self, channel: usize, index: usize) -> &[f64] {
        let start = (channel * self.n_patches + index) * self.patch_len;
        &self.data[start..start + self.patch_len]
    }
}

pub fn partition_patches(x: &TimeSeriesSample, t: usize) -> Result<PatchGrid> {
    let len = x.len();
    if t == 0 || len < t {
        return Err(SignalError::Data(format!(
            "series of length {len} is shorter than one patch of {t}"
        )));
    }
    let p = len / t;
    let data = x
        .channels()
        .flat_map(|ch| ch[..p * t].iter().copied())
        .collect();
    Ok(PatchGrid {
        data,
        n_channels: x.n_channels,
        n_patches: p,
        patch_len: t,
    })
}
