use std::f64::consts::PI;

use super::{Result, SignalError};

/// Tap count of the anti-aliasing / low-pass FIR.
pub const LOWPASS_TAPS: usize = 101;

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn design_lowpass(cutoff_hz: f64, sample_rate_hz: f64, taps: usize) -> Result<Vec<f64>> {
    if !(sample_rate_hz > 0.0) || !(cutoff_hz > 0.0) {
        return Err(SignalError::Config(format!(
            "rates must be positive (cutoff {cutoff_hz} Hz, sample rate {sample_rate_hz} Hz)"
        )));
    }
    if cutoff_hz >= sample_rate_hz / 2.0 {
        return Err(SignalError::Config(format!(
            "cutoff {cutoff_hz} Hz is not below the Nyquist frequency {} Hz",
            sample_rate_hz / 2.0
        )));
    }
    if taps % 2 == 0 {
        return Err(SignalError::Config(format!("tap count {taps} must be odd")));
    }
    let fc = cutoff_hz / sample_rate_hz;
    let mid = (taps / 2) as f64;
    let denom = (taps - 1).max(1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let m = n as f64 - mid;
            let sinc = if m == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * m).sin() / (PI * m)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos();
            sinc * window
        })
        .collect();
    let gain: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= gain);
    Ok(h)
}

fn causal_fir(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, &hk)| hk * x[n - k])
                .sum()
        })
        .collect()
}

/// Zero-phase FIR filtering: forward pass, time reversal, second pass.
///
/// The record is extended at both ends by odd reflection so that the start-up
/// transient of each pass stays inside the padding.
fn filtfilt(h: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x
            .iter()
            .map(|v| v * h.iter().sum::<f64>().powi(2))
            .collect();
    }
    let pad = (h.len() - 1).min(n - 1);
    let (first, last) = (x[0], x[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    let mut y = causal_fir(h, &ext);
    y.reverse();
    let mut y = causal_fir(h, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Zero-phase windowed-sinc low-pass (Hamming, 101 taps). Output length equals
/// input length.
pub fn lowpass_filter(x: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    let h = design_lowpass(cutoff_hz, sample_rate_hz, LOWPASS_TAPS)?;
    Ok(filtfilt(&h, x))
}

/// Linear interpolation onto `n` uniform points spanning the original support
/// (first and last samples map onto each other).
pub fn interp_linear(x: &[f64], n: usize) -> Vec<f64> {
    match (x.len(), n) {
        (_, 0) | (0, _) => Vec::new(),
        (1, _) => vec![x[0]; n],
        (_, 1) => vec![x[0]],
        (len, _) => {
            let step = (len - 1) as f64 / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    let pos = i as f64 * step;
                    let lo = (pos.floor() as usize).min(len - 2);
                    let frac = pos - lo as f64;
                    x[lo] + (x[lo + 1] - x[lo]) * frac
                })
                .collect()
        }
    }
}

/// Catmull-Rom cubic interpolation onto `n` uniform points spanning the
/// original support. Ends are extended by odd reflection, so straight lines
/// are reproduced exactly.
pub fn interp_cubic(x: &[f64], n: usize) -> Vec<f64> {
    let len = x.len();
    if len < 3 || n < 2 {
        return interp_linear(x, n);
    }
    let last = len - 1;
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * x[0] - x[i.unsigned_abs()]
        } else if i as usize > last {
            2.0 * x[last] - x[2 * last - i as usize]
        } else {
            x[i as usize]
        }
    };
    let step = last as f64 / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let pos = k as f64 * step;
            let i = (pos.floor() as isize).min(last as isize - 1);
            let t = pos - i as f64;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            0.5 * (2.0 * p1
                + (p2 - p0) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                + (3.0 * (p1 - p2) + p3 - p0) * t * t * t)
        })
        .collect()
}

/// Resample from `from_hz` to `to_hz`: low-pass below the new Nyquist when
/// downsampling, then cubic interpolation onto `round(T·to/from)` points.
pub fn resample(x: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if !(from_hz > 0.0) || !(to_hz > 0.0) {
        return Err(SignalError::Config(format!(
            "sample rates must be positive ({from_hz} Hz -> {to_hz} Hz)"
        )));
    }
    if from_hz == to_hz {
        return Ok(x.to_vec());
    }
    let out_len = ((x.len() as f64 * to_hz / from_hz).round() as usize).max(1);
    if to_hz < from_hz {
        let band_limited = lowpass_filter(x, from_hz, 0.45 * to_hz)?;
        Ok(interp_cubic(&band_limited, out_len))
    } else {
        Ok(interp_cubic(x, out_len))
    }
}

/// Linear resize onto `t` points; `t` must be a positive multiple of 32.
pub fn resize_to_length(x: &[f64], t: usize) -> Result<Vec<f64>> {
    if t == 0 || t % 32 != 0 {
        return Err(SignalError::Config(format!(
            "target length {t} is not a positive multiple of 32"
        )));
    }
    if x.is_empty() {
        return Err(SignalError::Data("cannot resize an empty signal".into()));
    }
    Ok(interp_linear(x, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::rms;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn gain_db(freq: f64) -> f64 {
        let x = sine(freq, 100.0, 3000);
        let y = lowpass_filter(&x, 100.0, 30.0).unwrap();
        // steady-state interior, away from the reflected edges
        20.0 * (rms(&y[500..2500]) / rms(&x[500..2500])).log10()
    }

    #[test]
    fn dc_passes_unchanged() {
        let x = vec![3.25; 700];
        let y = lowpass_filter(&x, 100.0, 30.0).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-6));
    }

    #[test]
    fn stopband_and_passband() {
        assert!(gain_db(45.0) <= -20.0, "45 Hz gain {}", gain_db(45.0));
        assert!(gain_db(10.0).abs() < 1.0, "10 Hz gain {}", gain_db(10.0));
    }

    #[test]
    fn cutoff_at_nyquist_rejected() {
        assert!(matches!(
            lowpass_filter(&[0.0; 10], 100.0, 50.0),
            Err(SignalError::Config(_))
        ));
    }

    #[test]
    fn resample_identity_and_constant() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(resample(&x, 128.0, 128.0).unwrap(), x);
        for (a, b) in [(100.0, 200.0), (250.0, 200.0), (160.0, 100.0), (10.0, 20.0)] {
            let y = resample(&[1.5; 400], a, b).unwrap();
            assert_eq!(y.len(), (400.0 * b / a as f64).round() as usize);
            assert!(y.iter().all(|v| (v - 1.5).abs() < 1e-9), "{a}->{b}");
        }
    }

    #[test]
    fn resample_ramp_upsampling() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let y = resample(&x, 10.0, 20.0).unwrap();
        assert_eq!(y.len(), 20);
        for (i, v) in y.iter().enumerate() {
            assert!((v - i as f64 / 19.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_reproduces_lines_and_interior_quadratics() {
        let line: Vec<f64> = (0..13).map(|i| 2.0 - 0.5 * i as f64).collect();
        let y = interp_cubic(&line, 40);
        for (k, v) in y.iter().enumerate() {
            assert!((v - (2.0 - 0.5 * 12.0 * k as f64 / 39.0)).abs() < 1e-12);
        }
        let quad: Vec<f64> = (0..13).map(|i| (i as f64).powi(2)).collect();
        let y = interp_cubic(&quad, 25);
        for (k, v) in y.iter().enumerate().skip(2).take(20) {
            assert!((v - (k as f64 / 2.0).powi(2)).abs() < 1e-9, "{k}");
        }
    }

    #[test]
    fn resample_round_trip_below_ten_hz() {
        for (a, b) in [
            (100.0, 200.0),
            (200.0, 100.0),
            (256.0, 100.0),
            (100.0, 256.0),
        ] {
            let n = (10.0 * a) as usize;
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / a;
                    (2.0 * PI * 10.0 * t).sin() + 0.5 * (2.0 * PI * 3.7 * t + 1.0).sin()
                })
                .collect();
            let back = resample(&resample(&x, a, b).unwrap(), b, a).unwrap();
            assert_eq!(back.len(), n);
            let err: Vec<f64> = x.iter().zip(&back).map(|(p, q)| p - q).collect();
            assert!(
                rms(&err) / rms(&x) < 0.01,
                "{a}->{b}: {}",
                rms(&err) / rms(&x)
            );
        }
    }

    #[test]
    fn resize_keeps_endpoints() {
        let y = resize_to_length(&[0.0, 1.0, 2.0, 3.0], 512).unwrap();
        assert_eq!(y.len(), 512);
        assert_eq!(y[0], 0.0);
        assert!((y[511] - 3.0).abs() < 1e-12);
        for (i, v) in y.iter().enumerate() {
            assert!((v - 3.0 * i as f64 / 511.0).abs() < 1e-12);
        }
        let same: Vec<f64> = (0..512).map(|i| (i as f64 * 0.1).cos()).collect();
        let out = resize_to_length(&same, 512).unwrap();
        assert!(same.iter().zip(&out).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(resize_to_length(&same, 500).is_err());
    }
}
