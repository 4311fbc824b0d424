use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbramod::CBraModConfig;
use crate::mantis::{AugmentConfig, MantisConfig};
use crate::train::{EncoderConfig, HeadConfig, ModelKind, TrainConfig};
use crate::{Error, Result};

use super::dataset::DatasetManifest;
use super::split::{split_by_subject, split_by_subject_ranges, Splits};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Inclusive subject-number ranges for train, val and test; overrides `fractions`.
    pub ranges: Option<[[u32; 2]; 3]>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.6, 0.2, 0.2],
            seed: 0,
            ranges: None,
        }
    }
}

impl SplitConfig {
    pub fn apply(&self, manifest: &DatasetManifest) -> Result<Splits> {
        match self.ranges {
            Some(r) => split_by_subject_ranges(manifest, r),
            None => split_by_subject(manifest, self.fractions, self.seed),
        }
    }
}

/// Everything a CLI run reads from its `--config` file. Missing sections take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub mantis: MantisConfig,
    pub cbramod: CBraModConfig,
    pub head: HeadConfig,
    pub augment: AugmentConfig,
    pub split: SplitConfig,
}

impl RunConfig {
    /// Mini encoders with the default training settings.
    pub fn mini() -> Self {
        RunConfig {
            mantis: MantisConfig::mini(),
            cbramod: CBraModConfig::mini(),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn encoder(&self, kind: ModelKind) -> EncoderConfig {
        match kind {
            ModelKind::Mantis => EncoderConfig::Mantis(self.mantis.clone()),
            ModelKind::Cbramod => EncoderConfig::Cbramod(self.cbramod.clone()),
        }
    }
}
