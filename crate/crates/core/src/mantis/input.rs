use crate::signal::{
    first_difference, instance_standardize, patch_stats, resize_to_length, TimeSeriesSample,
};
use crate::{Error, Result};

use super::MantisConfig;

/// Model-ready buffers for a batch of samples, flattened to `n_series =
/// batch × channels` independent series of `input_len` points.
#[derive(Clone, Debug, PartialEq)]
pub struct MantisInput {
    pub n_series: usize,
    pub n_channels: usize,
    pub input_len: usize,
    pub n_patches: usize,
    /// Standardized series, `[n_series, input_len]`.
    pub normalized: Vec<f64>,
    /// First difference of the standardized series, `[n_series, input_len]`.
    pub differenced: Vec<f64>,
    /// Raw per-patch `(mean, std)` pairs, `[n_series, n_patches, 2]`.
    pub stats: Vec<f64>,
}

impl MantisInput {
    fn empty(n_channels: usize, config: &MantisConfig) -> Self {
        MantisInput {
            n_series: 0,
            n_channels,
            input_len: config.input_len,
            n_patches: config.n_patches,
            normalized: Vec::new(),
            differenced: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn push(&mut self, x_norm: Vec<f64>, x_raw: &[f64]) -> Result<()> {
        let stats = patch_stats(x_raw, self.n_patches)?;
        self.differenced.extend(first_difference(&x_norm)?);
        self.normalized.extend(x_norm);
        for (m, s) in stats.mu.iter().zip(&stats.sigma) {
            self.stats.push(*m);
            self.stats.push(*s);
        }
        self.n_series += 1;
        Ok(())
    }

    /// Resize every channel, take raw patch statistics, then standardize.
    pub fn from_samples(samples: &[&TimeSeriesSample], config: &MantisConfig) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let mut input = Self::empty(first.n_channels, config);
        for s in samples {
            if s.n_channels != first.n_channels {
                return Err(Error::Data(format!(
                    "mixed channel counts in batch ({} vs {})",
                    s.n_channels, first.n_channels
                )));
            }
            for ch in s.channels() {
                let raw = resize_to_length(ch, config.input_len)?;
                let norm = instance_standardize(&raw, 1)?;
                input.push(norm, &raw)?;
            }
        }
        Ok(input)
    }

    /// Single prepared channel: standardized and raw series of `input_len` points.
    pub fn from_channel(x_norm: &[f64], x_raw: &[f64], config: &MantisConfig) -> Result<Self> {
        if x_norm.len() != config.input_len || x_raw.len() != config.input_len {
            return Err(Error::Tensor(crate::tensor::TensorError::shape(
                "tokenize_channel",
                format!(
                    "expected length {}, got normalized {} / raw {}",
                    config.input_len,
                    x_norm.len(),
                    x_raw.len()
                ),
            )));
        }
        let mut input = Self::empty(1, config);
        input.push(x_norm.to_vec(), x_raw)?;
        Ok(input)
    }

    pub(crate) fn check(&self, config: &MantisConfig) -> Result<()> {
        if self.input_len != config.input_len || self.n_patches != config.n_patches {
            return Err(Error::Config(format!(
                "input prepared for length {}/{} patches, model expects {}/{}",
                self.input_len, self.n_patches, config.input_len, config.n_patches
            )));
        }
        if self.n_series == 0 || self.n_series % self.n_channels != 0 {
            return Err(Error::Data("input has no complete samples".into()));
        }
        Ok(())
    }
}
