use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::signal::TimeSeriesSample;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.f32le";
pub const LABELS_FILE: &str = "labels.u32le";

/// On-disk description of a dataset directory. Samples are stored row-major
/// (`sample, channel, time`) as little-endian f32 in `data.f32le`; labels as
/// little-endian u32 in `labels.u32le`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_samples: usize,
    pub n_channels: usize,
    pub series_length: usize,
    pub sample_rate_hz: f64,
    pub label_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub dtype: String,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn expected_data_bytes(&self) -> usize {
        self.n_samples * self.n_channels * self.series_length * 4
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Data(m));
        if self.format_version != FORMAT_VERSION {
            return fail(format!(
                "unsupported format_version {}",
                self.format_version
            ));
        }
        if self.dtype != "f32le" {
            return fail(format!("unsupported dtype {:?}", self.dtype));
        }
        if self.label_names.is_empty() {
            return fail("label_names is empty".into());
        }
        if self.subject_ids.len() != self.n_samples {
            return fail(format!(
                "{} subject ids for {} samples",
                self.subject_ids.len(),
                self.n_samples
            ));
        }
        if self.n_channels == 0 || self.series_length == 0 || !(self.sample_rate_hz > 0.0) {
            return fail("channels, series length and sample rate must be positive".into());
        }
        Ok(())
    }
}

/// A dataset loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<TimeSeriesSample>,
}

impl Dataset {
    /// Builds the manifest from samples that share one geometry.
    pub fn from_samples(samples: Vec<TimeSeriesSample>, label_names: Vec<String>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("dataset has no samples".into()))?;
        let (c, t, rate) = (first.n_channels, first.len(), first.sample_rate_hz);
        for s in &samples {
            if s.n_channels != c || s.len() != t || s.sample_rate_hz != rate {
                return Err(Error::Data(format!(
                    "sample geometry {}x{} @ {} Hz differs from {c}x{t} @ {rate} Hz",
                    s.n_channels,
                    s.len(),
                    s.sample_rate_hz
                )));
            }
            if s.label >= label_names.len() {
                return Err(Error::Data(format!(
                    "label {} has no name among {} classes",
                    s.label,
                    label_names.len()
                )));
            }
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            n_samples: samples.len(),
            n_channels: c,
            series_length: t,
            sample_rate_hz: rate,
            label_names,
            subject_ids: samples.iter().map(|s| s.subject_id.clone()).collect(),
            dtype: "f32le".into(),
        };
        manifest.validate()?;
        Ok(Dataset { manifest, samples })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut data = Vec::with_capacity(self.manifest.expected_data_bytes());
        let mut labels = Vec::with_capacity(self.samples.len() * 4);
        for s in &self.samples {
            for &v in &s.data {
                data.extend_from_slice(&(v as f32).to_le_bytes());
            }
            labels.extend_from_slice(&(s.label as u32).to_le_bytes());
        }
        let manifest = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(DATA_FILE), data)?;
        fs::write(dir.join(LABELS_FILE), labels)?;
        Ok(())
    }

    /// Opens a dataset directory, enforcing the byte-length invariants.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| {
            Error::Data(format!(
                "cannot read {}: {e}",
                dir.join(MANIFEST_FILE).display()
            ))
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("invalid manifest: {e}")))?;
        manifest.validate()?;
        let data = fs::read(dir.join(DATA_FILE))?;
        if data.len() != manifest.expected_data_bytes() {
            return Err(Error::Integrity(format!(
                "{DATA_FILE} holds {} bytes, manifest implies {}",
                data.len(),
                manifest.expected_data_bytes()
            )));
        }
        let labels = fs::read(dir.join(LABELS_FILE))?;
        if labels.len() != manifest.n_samples * 4 {
            return Err(Error::Integrity(format!(
                "{LABELS_FILE} holds {} bytes, manifest implies {}",
                labels.len(),
                manifest.n_samples * 4
            )));
        }
        let per_sample = manifest.n_channels * manifest.series_length;
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let mut samples = Vec::with_capacity(manifest.n_samples);
        for (i, (chunk, lb)) in values
            .chunks(per_sample)
            .zip(labels.chunks_exact(4))
            .enumerate()
        {
            let label = u32::from_le_bytes([lb[0], lb[1], lb[2], lb[3]]) as usize;
            if label >= manifest.n_classes() {
                return Err(Error::Data(format!(
                    "sample {i} has label {label} but only {} classes are named",
                    manifest.n_classes()
                )));
            }
            samples.push(TimeSeriesSample::new(
                chunk.to_vec(),
                manifest.n_channels,
                manifest.sample_rate_hz,
                label,
                manifest.subject_ids[i].clone(),
            )?);
        }
        Ok(Dataset { manifest, samples })
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&TimeSeriesSample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }
}
