use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbramod::{CBraModConfig, CBraModInput, CBraModModel};
use crate::mantis::{MantisConfig, MantisInput, MantisModel};
use crate::metrics::Metric;
use crate::nn::{Bound, Init, ParamStore};
use crate::signal::TimeSeriesSample;
use crate::tensor::{Float, Graph, Mode, Var};
use crate::{Error, Result};

use super::head::{Head, HeadConfig};
use super::loss::softmax_and_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mantis,
    Cbramod,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mantis" => Ok(ModelKind::Mantis),
            "cbramod" => Ok(ModelKind::Cbramod),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mantis => "mantis",
            ModelKind::Cbramod => "cbramod",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderConfig {
    Mantis(MantisConfig),
    Cbramod(CBraModConfig),
}

impl EncoderConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            EncoderConfig::Mantis(_) => ModelKind::Mantis,
            EncoderConfig::Cbramod(_) => ModelKind::Cbramod,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Mantis(MantisModel),
    Cbramod(CBraModModel),
}

impl Encoder {
    pub fn new<T: Float>(
        config: &EncoderConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        Ok(match config {
            EncoderConfig::Mantis(c) => Encoder::Mantis(MantisModel::new(c.clone(), store, seed)?),
            EncoderConfig::Cbramod(c) => {
                Encoder::Cbramod(CBraModModel::new(c.clone(), store, seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Encoder::Mantis(_) => ModelKind::Mantis,
            Encoder::Cbramod(_) => ModelKind::Cbramod,
        }
    }

    pub fn namespace(&self) -> &'static str {
        match self {
            Encoder::Mantis(_) => MantisModel::NAMESPACE,
            Encoder::Cbramod(_) => CBraModModel::NAMESPACE,
        }
    }

    /// Width of the flattened features for samples of the given geometry.
    pub fn feature_dim(&self, n_channels: usize, series_len: usize) -> Result<usize> {
        match self {
            Encoder::Mantis(m) => Ok(m.embedding_dim(n_channels)),
            Encoder::Cbramod(m) => {
                let p = series_len / m.config.patch_len;
                if p == 0 {
                    return Err(Error::Data(format!(
                        "series of length {series_len} is shorter than one {}-point patch",
                        m.config.patch_len
                    )));
                }
                Ok(m.feature_dim(n_channels, p))
            }
        }
    }

    /// Flattened features `[batch, feature_dim]`.
    pub fn features<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        samples: &[&TimeSeriesSample],
    ) -> Result<Var<'g, T>> {
        match self {
            Encoder::Mantis(m) => {
                let input = MantisInput::from_samples(samples, &m.config)?;
                m.encode(p, &input)
            }
            Encoder::Cbramod(m) => {
                let input = CBraModInput::from_samples(samples, m.config.patch_len)?;
                let e_r = m.encode(p, &input, None)?;
                m.classify_features(e_r)
            }
        }
    }
}

/// Seed used for head initialization, independent of the encoder's stream.
pub fn head_seed(seed: u64) -> u64 {
    crate::tensor::mix(seed ^ 0x4845_4144)
}

/// Encoder plus classification head sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    pub encoder: Encoder,
    pub head: Head,
    pub store: ParamStore<T>,
    pub n_classes: usize,
}

impl<T: Float> Classifier<T> {
    /// Randomly initialized encoder (from `seed`) and head (from `head_seed(seed)`).
    pub fn new(
        encoder: &EncoderConfig,
        head: &HeadConfig,
        n_channels: usize,
        series_len: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Encoder::new(encoder, &mut store, seed)?;
        let in_dim = encoder.feature_dim(n_channels, series_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(head_seed(seed));
        let head = Head::new(
            &mut store,
            &mut Init { rng: &mut rng },
            head,
            in_dim,
            n_classes,
        )?;
        Ok(Classifier {
            encoder,
            head,
            store,
            n_classes,
        })
    }

    /// Replaces every encoder tensor with the same-named tensor of `source`.
    pub fn load_encoder(&mut self, source: &ParamStore<T>) -> Result<usize> {
        let prefix = format!("{}.", self.encoder.namespace());
        let mut count = 0;
        let names: Vec<String> = self.store.iter().map(|(n, _)| n.to_string()).collect();
        for (i, name) in names.into_iter().enumerate() {
            if !name.starts_with(&prefix) {
                continue;
            }
            let src = source
                .by_name(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
            let dst = &mut self.store.tensors_mut()[i];
            if src.shape() != dst.shape() {
                return Err(Error::Tensor(crate::tensor::TensorError::shape(
                    "load",
                    format!(
                        "tensor {name}: model expects {:?}, checkpoint has {:?}",
                        dst.shape(),
                        src.shape()
                    ),
                )));
            }
            *dst = src.clone();
            count += 1;
        }
        Ok(count)
    }

    pub fn logits<'g>(
        &self,
        p: &Bound<'g, T>,
        samples: &[&TimeSeriesSample],
    ) -> Result<Var<'g, T>> {
        let z = self.encoder.features(p, samples)?;
        self.head.forward(p, z)
    }

    /// Eval-mode logits `[n, n_classes]` computed in batches.
    pub fn eval_logits(
        &self,
        samples: &[&TimeSeriesSample],
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len() * self.n_classes);
        for chunk in samples.chunks(batch_size.max(1)) {
            let graph = Graph::new(Mode::Eval);
            let p = Bound::bind(&graph, &self.store, false);
            out.extend(self.logits(&p, chunk)?.value().to_f64_vec());
        }
        Ok(out)
    }

    /// Mean cross-entropy and softmax probabilities on `samples`.
    pub fn evaluate(&self, samples: &[&TimeSeriesSample], batch_size: usize) -> Result<Evaluation> {
        let logits = self.eval_logits(samples, batch_size)?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        let (probs, loss) = softmax_and_loss(&logits, &labels, self.n_classes);
        Ok(Evaluation {
            labels,
            probs,
            loss,
            n_classes: self.n_classes,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub labels: Vec<usize>,
    pub probs: Vec<f64>,
    pub loss: f64,
    pub n_classes: usize,
}

impl Evaluation {
    /// The metric, or NaN when it is undefined on these labels.
    pub fn metric(&self, metric: Metric) -> f64 {
        metric
            .evaluate(&self.labels, &self.probs, self.n_classes)
            .unwrap_or(f64::NAN)
    }
}
