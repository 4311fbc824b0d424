use crate::tensor::{Float, Graph, Tensor, Var};
use crate::{Error, Result};

pub const NORM_EPS: f64 = 1e-12;

/// Cosine similarity `⟨a/‖a‖, b/‖b‖⟩`, norms floored at `1e-12`.
pub fn scos(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// Mean over rows of `−log softmax_j(scos(z_i, z'_j) / τ)[i]`.
pub fn info_nce<'g, T: Float>(z: Var<'g, T>, z_pair: Var<'g, T>, tau: f64) -> Result<Var<'g, T>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    let s = z.shape();
    if s.len() != 2 || z_pair.shape() != s {
        return Err(Error::Tensor(crate::tensor::TensorError::shape(
            "info_nce",
            format!("views {:?} and {:?} must both be [N, D]", s, z_pair.shape()),
        )));
    }
    let (n, d) = (s[0], s[1]);
    let a = z.l2_normalize(NORM_EPS).reshape(&[1, n, d])?;
    let b = z_pair.l2_normalize(NORM_EPS).reshape(&[1, n, d])?;
    let logits = a.bmm_t(b)?.reshape(&[n, n])?.scale(1.0 / tau);
    let targets: Vec<usize> = (0..n).collect();
    Ok(logits.log_softmax().nll(&targets)?)
}

/// Mean negative log-softmax of the true class.
pub fn cross_entropy<'g, T: Float>(logits: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
    Ok(logits.log_softmax().nll(labels)?)
}

/// Row-wise softmax probabilities and mean cross-entropy of `[n, k]` logits.
pub fn softmax_and_loss(logits: &[f64], labels: &[usize], k: usize) -> (Vec<f64>, f64) {
    let mut probs = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + total.ln();
        loss += log_z - row[y];
        probs.extend(row.iter().map(|v| (v - log_z).exp()));
    }
    (probs, loss / labels.len().max(1) as f64)
}

/// Evaluates `info_nce` on plain matrices.
pub fn info_nce_value(z: &[f64], z_pair: &[f64], n: usize, tau: f64) -> Result<f64> {
    let graph = Graph::<f64>::new(crate::tensor::Mode::Eval);
    let d = z.len() / n.max(1);
    let a = graph.constant(Tensor::from_f64(&[n, d], z)?);
    let b = graph.constant(Tensor::from_f64(&[n, d], z_pair)?);
    Ok(info_nce(a, b, tau)?.item())
}
