use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::signal::TimeSeriesSample;
use crate::tensor::mix;
use crate::{Error, Result};

use super::dataset::Dataset;

/// A sinusoid whose frequency is drawn uniformly from `[low_hz, high_hz]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub name: String,
    pub bands: Vec<Band>,
}

/// Generator settings. Each sample is a sum of its class's band sinusoids with
/// random phases, scaled by a per-subject gain, plus a per-subject per-channel
/// baseline and Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub n_channels: usize,
    pub series_length: usize,
    pub sample_rate_hz: f64,
    pub classes: Vec<ClassSignature>,
    /// Subject gains are drawn uniformly from this range.
    pub gain_range: [f64; 2],
    /// Standard deviation of the per-subject, per-channel baseline shift.
    pub baseline_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

fn band(low: f64, high: f64, amplitude: f64) -> Band {
    Band {
        low_hz: low,
        high_hz: high,
        amplitude,
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 10,
            samples_per_subject: 20,
            n_channels: 2,
            series_length: 400,
            sample_rate_hz: 100.0,
            classes: vec![
                ClassSignature {
                    name: "slow".into(),
                    bands: vec![band(2.0, 4.0, 1.0)],
                },
                ClassSignature {
                    name: "fast".into(),
                    bands: vec![band(10.0, 14.0, 1.0)],
                },
            ],
            gain_range: [0.8, 1.25],
            baseline_std: 0.2,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// One fixed-frequency band per class, no subject variation and no noise.
    pub fn clean(classes: &[(f64, &str)], n_subjects: usize, samples_per_subject: usize) -> Self {
        SynthSpec {
            n_subjects,
            samples_per_subject,
            classes: classes
                .iter()
                .map(|&(f, name)| ClassSignature {
                    name: name.into(),
                    bands: vec![band(f, f, 1.0)],
                })
                .collect(),
            gain_range: [1.0, 1.0],
            baseline_std: 0.0,
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.samples_per_subject == 0 {
            return fail("need at least one subject and one sample per subject".into());
        }
        if self.classes.is_empty() {
            return fail("need at least one class".into());
        }
        if self.n_channels == 0 || self.series_length == 0 || !(self.sample_rate_hz > 0.0) {
            return fail("channels, series length and sample rate must be positive".into());
        }
        let [g0, g1] = self.gain_range;
        if !(g0 > 0.0 && g1 >= g0) || !(self.baseline_std >= 0.0) || !(self.noise_std >= 0.0) {
            return fail("gains must be positive with low <= high; deviations non-negative".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.bands.is_empty() {
                return fail(format!("class {:?} has no bands", c.name));
            }
            for b in &c.bands {
                if !(b.low_hz > 0.0 && b.high_hz >= b.low_hz && b.amplitude > 0.0) {
                    return fail(format!("class {:?} has an invalid band {b:?}", c.name));
                }
                if b.high_hz >= self.sample_rate_hz / 2.0 {
                    return fail(format!("band {b:?} reaches the Nyquist frequency"));
                }
            }
            if self.classes[..i].iter().any(|o| o.bands == c.bands) {
                return fail(format!(
                    "class {:?} duplicates another class signature",
                    c.name
                ));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_subjects * self.samples_per_subject
    }

    pub fn subject_id(index: usize) -> String {
        format!("S{:03}", index + 1)
    }

    fn rng(&self, subject: usize, sample: Option<usize>) -> ChaCha8Rng {
        let tag = sample.map_or(u64::MAX, |s| s as u64);
        ChaCha8Rng::seed_from_u64(mix(mix(self.seed ^ mix(subject as u64)) ^ tag))
    }

    /// Sample `index` of `subject`; labels cycle through the classes.
    pub fn sample(&self, subject: usize, index: usize) -> TimeSeriesSample {
        let mut subject_rng = self.rng(subject, None);
        let [g0, g1] = self.gain_range;
        let gain = if g1 > g0 {
            subject_rng.gen_range(g0..=g1)
        } else {
            g0
        };
        let baselines: Vec<f64> = (0..self.n_channels)
            .map(|_| self.baseline_std * subject_rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();

        let mut rng = self.rng(subject, Some(index));
        let label = index % self.classes.len();
        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
        let mut data = Vec::with_capacity(self.n_channels * self.series_length);
        for baseline in baselines {
            let waves: Vec<(f64, f64, f64)> = self.classes[label]
                .bands
                .iter()
                .map(|b| {
                    let f = if b.high_hz > b.low_hz {
                        rng.gen_range(b.low_hz..=b.high_hz)
                    } else {
                        b.low_hz
                    };
                    (f, b.amplitude, rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            for t in 0..self.series_length {
                let time = t as f64 / self.sample_rate_hz;
                let signal: f64 = waves
                    .iter()
                    .map(|&(f, a, phase)| a * (2.0 * PI * f * time + phase).sin())
                    .sum();
                let eps = if self.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                data.push(gain * signal + baseline + eps);
            }
        }
        TimeSeriesSample {
            data,
            n_channels: self.n_channels,
            sample_rate_hz: self.sample_rate_hz,
            label,
            subject_id: Self::subject_id(subject),
        }
    }
}

/// Generates every sample of `spec`, subject-major.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.n_subjects)
        .flat_map(|s| (0..spec.samples_per_subject).map(move |i| (s, i)))
        .map(|(s, i)| spec.sample(s, i))
        .collect();
    let names = spec.classes.iter().map(|c| c.name.clone()).collect();
    Dataset::from_samples(samples, names)
}
