//! Channel-independent contrastive encoder.
//!
//! Each channel is resized to a fixed length, standardized, and turned into
//! `n_patches` tokens built from three parts: a convolution + mean-pool of the
//! standardized series, the same pipeline on its first difference, and an
//! encoding of the raw per-patch mean/std. A class token and sinusoidal
//! positions are added, a pre-norm transformer runs over the sequence, and the
//! class row is the channel descriptor. Channel descriptors are concatenated.

mod augment;
mod input;

pub use augment::{augment, AugmentConfig};
pub use input::MantisInput;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Bound, Conv1d, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock};
use crate::signal::TimeSeriesSample;
use crate::tensor::{Float, Graph, Mode, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MantisConfig {
    pub token_dim: usize,
    pub n_patches: usize,
    pub input_len: usize,
    pub scalar_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub conv_kernel: usize,
    pub mlp_ratio: usize,
}

impl Default for MantisConfig {
    fn default() -> Self {
        MantisConfig {
            token_dim: 256,
            n_patches: 32,
            input_len: 512,
            scalar_dim: 64,
            n_blocks: 6,
            n_heads: 8,
            dropout: 0.1,
            conv_kernel: 16,
            mlp_ratio: 4,
        }
    }
}

impl MantisConfig {
    /// Two blocks at width 32; same tokenizer geometry as the full model.
    pub fn mini() -> Self {
        MantisConfig {
            token_dim: 32,
            scalar_dim: 8,
            n_blocks: 2,
            n_heads: 4,
            ..Self::default()
        }
    }

    pub fn patch_width(&self) -> usize {
        self.input_len / self.n_patches
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if [
            self.token_dim,
            self.n_patches,
            self.input_len,
            self.scalar_dim,
            self.n_blocks,
            self.n_heads,
            self.conv_kernel,
            self.mlp_ratio,
        ]
        .contains(&0)
        {
            return fail(format!("all Mantis dimensions must be positive: {self:?}"));
        }
        if self.token_dim % self.n_heads != 0 {
            return fail(format!(
                "token_dim {} not divisible by {} heads",
                self.token_dim, self.n_heads
            ));
        }
        if self.token_dim % 2 != 0 {
            return fail(format!(
                "token_dim {} must be even for sinusoidal positions",
                self.token_dim
            ));
        }
        if self.input_len % 32 != 0 || self.input_len % self.n_patches != 0 {
            return fail(format!(
                "input_len {} must be a multiple of 32 and of n_patches {}",
                self.input_len, self.n_patches
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Sinusoidal positions: `P[pos, 2i] = sin(pos / 10000^(2i/dim))`,
/// `P[pos, 2i+1] = cos(pos / 10000^(2i/dim))`.
pub fn sinusoidal_pe(len: usize, dim: usize) -> Result<Tensor<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("positional dim {dim} must be even")));
    }
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Ok(Tensor::new(vec![len, dim], data)?)
}

/// Per-channel token matrix, before and after the class token and positions.
#[derive(Clone, Debug)]
pub struct TokenSequence<T> {
    pub tokens: Tensor<T>,
    pub with_cls: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct MantisModel {
    pub config: MantisConfig,
    pub conv: Conv1d,
    pub diff_conv: Conv1d,
    pub scalar_encoder: Linear,
    pub projection: Linear,
    pub token_norm: LayerNorm,
    pub cls_token: ParamId,
    pub blocks: Vec<TransformerBlock>,
    positions: Tensor<f64>,
}

impl MantisModel {
    pub const NAMESPACE: &'static str = "mantis";

    /// Registers all parameters under `mantis.*` and initializes them from `seed`.
    pub fn new<T: Float>(
        config: MantisConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let ns = Self::NAMESPACE;
        let d = config.token_dim;
        let conv = Conv1d::new(
            store,
            &mut init,
            &format!("{ns}.tokenizer.conv"),
            1,
            d,
            config.conv_kernel,
        );
        let diff_conv = Conv1d::new(
            store,
            &mut init,
            &format!("{ns}.tokenizer.diff_conv"),
            1,
            d,
            config.conv_kernel,
        );
        let scalar_encoder = Linear::new(
            store,
            &mut init,
            &format!("{ns}.tokenizer.scalar"),
            2,
            config.scalar_dim,
            true,
        );
        let projection = Linear::new(
            store,
            &mut init,
            &format!("{ns}.tokenizer.proj"),
            2 * d + config.scalar_dim,
            d,
            true,
        );
        let token_norm = LayerNorm::new(store, &format!("{ns}.tokenizer.norm"), d);
        let cls_token = store.add(format!("{ns}.cls_token"), init.normal(&[d], 0.02));
        let blocks = (0..config.n_blocks)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &mut init,
                    &format!("{ns}.blocks.{i}"),
                    d,
                    config.n_heads,
                    config.mlp_ratio * d,
                    config.dropout,
                )
            })
            .collect();
        let positions = sinusoidal_pe(config.n_patches + 1, d)?;
        Ok(MantisModel {
            config,
            conv,
            diff_conv,
            scalar_encoder,
            projection,
            token_norm,
            cls_token,
            blocks,
            positions,
        })
    }

    pub fn embedding_dim(&self, n_channels: usize) -> usize {
        self.config.token_dim * n_channels
    }

    fn pooled_conv<'g, T: Float>(
        &self,
        conv: &Conv1d,
        p: &Bound<'g, T>,
        series: &[f64],
        n: usize,
    ) -> Result<Var<'g, T>> {
        let len = self.config.input_len;
        let x = p.graph().constant(Tensor::from_f64(&[n, 1, len], series)?);
        Ok(conv
            .forward(p, x)?
            .mean_pool(2, self.config.patch_width())?
            .permute(&[0, 2, 1])?)
    }

    /// Tokens `[n_series, n_patches, token_dim]` before the class token.
    pub fn tokenize<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        input: &MantisInput,
    ) -> Result<Var<'g, T>> {
        input.check(&self.config)?;
        let n = input.n_series;
        let base = self.pooled_conv(&self.conv, p, &input.normalized, n)?;
        let diff = self.pooled_conv(&self.diff_conv, p, &input.differenced, n)?;
        let stats = p.graph().constant(Tensor::from_f64(
            &[n, self.config.n_patches, 2],
            &input.stats,
        )?);
        let scalars = self.scalar_encoder.forward(p, stats)?.gelu();
        let joined = Var::concat(&[base, diff, scalars], 2)?;
        let projected = self.projection.forward(p, joined)?;
        Ok(self.token_norm.forward(p, projected)?)
    }

    /// Prepends the class token and adds positions: `[n, n_patches + 1, d]`.
    pub fn with_class_token<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        tokens: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let s = tokens.shape();
        let cls = p
            .var(self.cls_token)
            .reshape(&[1, s[2]])?
            .broadcast_to(&[s[0], 1, s[2]])?;
        let seq = Var::concat(&[cls, tokens], 1)?;
        let pe = p.graph().constant(self.positions.cast());
        Ok(seq.add(pe)?)
    }

    /// Runs the blocks over a prepared sequence and returns the class rows `[n, d]`.
    pub fn encode_sequence<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        seq: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let mut x = seq;
        for block in &self.blocks {
            x = block.forward(p, x)?;
        }
        Ok(x.select(1, 0)?)
    }

    /// Channel descriptors `[n_series, d]`, one per prepared series.
    pub fn channel_embeddings<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        input: &MantisInput,
    ) -> Result<Var<'g, T>> {
        let tokens = self.tokenize(p, input)?;
        let seq = self.with_class_token(p, tokens)?;
        self.encode_sequence(p, seq)
    }

    /// Concatenated descriptors `[batch, d·C]` in channel order.
    pub fn encode<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        input: &MantisInput,
    ) -> Result<Var<'g, T>> {
        let z = self.channel_embeddings(p, input)?;
        let c = input.n_channels;
        Ok(z.reshape(&[input.n_series / c, c * self.config.token_dim])?)
    }

    /// Eval-mode embedding of one sample.
    pub fn embed<T: Float>(
        &self,
        store: &ParamStore<T>,
        sample: &TimeSeriesSample,
    ) -> Result<Vec<T>> {
        let graph = Graph::new(Mode::Eval);
        let p = Bound::bind(&graph, store, false);
        let input = MantisInput::from_samples(&[sample], &self.config)?;
        Ok(self.encode(&p, &input)?.value().data().to_vec())
    }

    /// Tokens of a single channel given its standardized and raw (resized) series.
    pub fn tokenize_channel<T: Float>(
        &self,
        store: &ParamStore<T>,
        x_norm: &[f64],
        x_raw: &[f64],
    ) -> Result<TokenSequence<T>> {
        let input = MantisInput::from_channel(x_norm, x_raw, &self.config)?;
        let graph = Graph::new(Mode::Eval);
        let p = Bound::bind(&graph, store, false);
        let tokens = self.tokenize(&p, &input)?;
        let with_cls = self.with_class_token(&p, tokens)?;
        let strip = |v: Var<'_, T>| -> Result<Tensor<T>> {
            let t = (*v.value()).clone();
            let s = t.shape()[1..].to_vec();
            Ok(t.reshape(&s)?)
        };
        Ok(TokenSequence {
            tokens: strip(tokens)?,
            with_cls: strip(with_cls)?,
        })
    }
}

#[cfg(test)]
mod tests;
