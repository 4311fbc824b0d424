use super::{Result, SignalError};

pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Per-channel zero mean / unit variance over time, `x ← (x − μ) / sqrt(σ² + ε)`.
pub fn instance_standardize(data: &[f64], n_channels: usize) -> Result<Vec<f64>> {
    if n_channels == 0 || data.len() % n_channels != 0 {
        return Err(SignalError::Data("data is not channel-aligned".into()));
    }
    let t = data.len() / n_channels;
    if t < 2 {
        return Err(SignalError::Data(format!(
            "standardization needs at least 2 samples per channel, got {t}"
        )));
    }
    let mut out = Vec::with_capacity(data.len());
    for ch in data.chunks(t) {
        let mean = ch.iter().sum::<f64>() / t as f64;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var + STANDARDIZE_EPS).sqrt();
        out.extend(ch.iter().map(|v| (v - mean) * inv));
    }
    Ok(out)
}

/// Length-preserving first difference with a zero at the head.
pub fn first_difference(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(SignalError::Data(format!(
            "first difference needs at least 2 samples, got {}",
            x.len()
        )));
    }
    Ok(std::iter::once(0.0)
        .chain(x.windows(2).map(|w| w[1] - w[0]))
        .collect())
}

/// Mean and population standard deviation of each contiguous window.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn patch_stats(x: &[f64], n: usize) -> Result<PatchStats> {
    if n == 0 || x.is_empty() || x.len() % n != 0 {
        return Err(SignalError::Data(format!(
            "length {} is not divisible into {n} windows",
            x.len()
        )));
    }
    let w = x.len() / n;
    let (mu, sigma) = x
        .chunks(w)
        .map(|win| {
            let m = win.iter().sum::<f64>() / w as f64;
            let v = win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / w as f64;
            (m, v.sqrt())
        })
        .unzip();
    Ok(PatchStats { mu, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_closed_forms() {
        assert_eq!(instance_standardize(&[4.0; 6], 2).unwrap(), vec![0.0; 6]);
        let y = instance_standardize(&[1.0, 3.0], 1).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-7 && (y[1] - 1.0).abs() < 1e-7);
        assert!(instance_standardize(&[1.0], 1).is_err());
    }

    #[test]
    fn difference_examples() {
        assert_eq!(
            first_difference(&[0.0, 1.0, 3.0]).unwrap(),
            vec![0.0, 1.0, 2.0]
        );
        assert_eq!(first_difference(&[2.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn stats_by_hand() {
        let s = patch_stats(&[5.0; 512], 32).unwrap();
        assert!(s.mu.iter().all(|&m| m == 5.0) && s.sigma.iter().all(|&v| v == 0.0));

        // windows of 4: [1,3,1,3] -> mean 2, sd 1; [0,0,4,4] -> mean 2, sd 2
        let s = patch_stats(&[1.0, 3.0, 1.0, 3.0, 0.0, 0.0, 4.0, 4.0], 2).unwrap();
        assert_eq!(s.mu, vec![2.0, 2.0]);
        assert_eq!(s.sigma, vec![1.0, 2.0]);
    }
}
