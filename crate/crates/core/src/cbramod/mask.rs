use rand::seq::index::sample;
use rand::Rng;

use crate::{Error, Result};

/// Patches selected for reconstruction on a `C × p` grid (row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSpec {
    pub mask: Vec<bool>,
    pub n_masked: usize,
    pub n_channels: usize,
    pub n_patches: usize,
}

/// Uniformly chooses exactly `⌊ratio · C · p⌋` patches without replacement.
pub fn mask_patches<R: Rng>(
    n_channels: usize,
    n_patches: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<MaskSpec> {
    let total = n_channels * n_patches;
    if total < 2 {
        return Err(Error::Data(format!(
            "grid of {total} patches is too small to mask"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("mask ratio {ratio} outside (0, 1)")));
    }
    let n_masked = (ratio * total as f64).floor() as usize;
    if n_masked == 0 {
        return Err(Error::Data(format!(
            "ratio {ratio} masks no patch of {total}; nothing to reconstruct"
        )));
    }
    let mut mask = vec![false; total];
    for i in sample(rng, total, n_masked) {
        mask[i] = true;
    }
    Ok(MaskSpec {
        mask,
        n_masked,
        n_channels,
        n_patches,
    })
}
