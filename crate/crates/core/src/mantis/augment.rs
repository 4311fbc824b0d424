use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::signal::{interp_linear, TimeSeriesSample};

/// Random crop (fraction of the support, resized back) followed by Gaussian
/// jitter proportional to each channel's standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub min_crop: f64,
    pub max_crop: f64,
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_crop: 0.8,
            max_crop: 1.0,
            jitter: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            min_crop: 1.0,
            max_crop: 1.0,
            jitter: 0.0,
        }
    }
}

pub fn augment<R: Rng + ?Sized>(
    x: &TimeSeriesSample,
    config: &AugmentConfig,
    rng: &mut R,
) -> TimeSeriesSample {
    let t = x.len();
    let frac = if config.max_crop > config.min_crop {
        rng.gen_range(config.min_crop..=config.max_crop)
    } else {
        config.max_crop
    };
    let crop = ((frac * t as f64).round() as usize).clamp(2.min(t), t);
    let start = if crop < t {
        rng.gen_range(0..=t - crop)
    } else {
        0
    };

    let mut data = Vec::with_capacity(x.data.len());
    for ch in x.channels() {
        let resized = if crop == t {
            ch.to_vec()
        } else {
            interp_linear(&ch[start..start + crop], t)
        };
        if config.jitter > 0.0 {
            let mean = ch.iter().sum::<f64>() / t as f64;
            let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
            let sigma = config.jitter * std;
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).expect("finite sigma");
                data.extend(resized.into_iter().map(|v| v + noise.sample(rng)));
                continue;
            }
        }
        data.extend(resized);
    }
    TimeSeriesSample { data, ..x.clone() }
}
