//! Workbench for channel-independent contrastive (Mantis-style) and masked
//! criss-cross (CBraMod-style) time-series encoders applied to EEG.

pub mod cbramod;
mod error;
pub mod mantis;
pub mod metrics;
pub mod nn;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod workbench;

pub use error::{Error, Result};
