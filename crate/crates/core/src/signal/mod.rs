//! Deterministic preprocessing from raw multichannel records to model inputs.
//!
//! Everything here is pure and operates on `f64` buffers. Multichannel data is
//! stored channel-major (`C × T`, row-major).

mod filter;
mod sample;
mod transform;

pub use filter::{
    design_lowpass, interp_cubic, interp_linear, lowpass_filter, resample, resize_to_length,
};
pub use sample::{epoch_segment, partition_patches, PatchGrid, Record, TimeSeriesSample};
pub use transform::{first_difference, instance_standardize, patch_stats, PatchStats};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Root-mean-square of a buffer (0 for an empty one).
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
