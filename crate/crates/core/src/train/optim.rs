use serde::{Deserialize, Serialize};

use crate::tensor::{Float, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new<T: Float>(config: AdamWConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// `θ ← θ(1 − lr·wd)`, then `θ ← θ − lr·m̂ / (√v̂ + eps)`.
    pub fn step<T: Float>(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Config(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.as_f64();
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let theta = w.as_f64() * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
                *w = T::of(theta);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<T: Float>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut()
                .iter_mut()
                .for_each(|v| *v = T::of(v.as_f64() * scale));
        }
    }
    norm
}

/// Number of warmup steps: `round(warmup_frac · total_steps)`.
pub fn warmup_steps(total_steps: u64, warmup_frac: f64) -> u64 {
    (warmup_frac * total_steps as f64).round() as u64
}

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: u64, total_steps: u64, warmup_frac: f64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = warmup_steps(total_steps, warmup_frac);
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if warmup == total_steps {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
