//! Masked criss-cross patch encoder.
//!
//! A sample is cut into `C × p` patches of `t` points. Each patch is embedded
//! by a small convolution stack plus a linear map of its DFT magnitude; masked
//! patches are swapped for a learnable token; depthwise convolutions over the
//! channel × patch grid add input-conditioned positions; criss-cross blocks run
//! attention across channels and across patches in parallel. A bias-free
//! linear map reconstructs patches for masked-autoencoding pretraining.

mod block;
mod mask;

pub use block::CrissCrossBlock;
pub use mask::{mask_patches, MaskSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Bound, Conv1d, Init, Linear, ParamId, ParamStore};
use crate::signal::{instance_standardize, partition_patches, PatchGrid, TimeSeriesSample};
use crate::tensor::{Float, Graph, Mode, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CBraModConfig {
    pub patch_len: usize,
    pub embed_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mask_ratio: f64,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
}

impl Default for CBraModConfig {
    fn default() -> Self {
        CBraModConfig {
            patch_len: 200,
            embed_dim: 200,
            n_blocks: 12,
            n_heads: 8,
            mask_ratio: 0.5,
            conv_channels: 8,
            conv_kernel: 7,
            mlp_ratio: 4,
            dropout: 0.1,
        }
    }
}

impl CBraModConfig {
    /// Two blocks, four heads, 40-point patches embedded at width 40.
    pub fn mini() -> Self {
        CBraModConfig {
            patch_len: 40,
            embed_dim: 40,
            n_blocks: 2,
            n_heads: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if [
            self.patch_len,
            self.embed_dim,
            self.n_blocks,
            self.n_heads,
            self.conv_channels,
            self.conv_kernel,
            self.mlp_ratio,
        ]
        .contains(&0)
        {
            return fail(format!("all CBraMod dimensions must be positive: {self:?}"));
        }
        if self.patch_len != self.embed_dim {
            return fail(format!(
                "patch_len {} must equal embed_dim {}: the convolution branch keeps the patch length",
                self.patch_len, self.embed_dim
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.n_heads
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return fail(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// A batch of patch grids, `[batch, channels, patches, patch_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CBraModInput {
    pub batch: usize,
    pub n_channels: usize,
    pub n_patches: usize,
    pub patch_len: usize,
    pub patches: Vec<f64>,
}

impl CBraModInput {
    pub fn from_grids(grids: &[&PatchGrid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Data("empty batch".into()))?;
        let shape = first.shape();
        let mut patches = Vec::with_capacity(grids.len() * first.data.len());
        for g in grids {
            if g.shape() != shape {
                return Err(Error::Data(format!(
                    "mixed patch grids in batch ({:?} vs {:?})",
                    g.shape(),
                    shape
                )));
            }
            patches.extend_from_slice(&g.data);
        }
        Ok(CBraModInput {
            batch: grids.len(),
            n_channels: shape[0],
            n_patches: shape[1],
            patch_len: shape[2],
            patches,
        })
    }

    /// Standardizes each channel of each sample, then partitions into patches.
    pub fn from_samples(samples: &[&TimeSeriesSample], patch_len: usize) -> Result<Self> {
        let grids = samples
            .iter()
            .map(|s| {
                let data = instance_standardize(&s.data, s.n_channels)?;
                let normalized = TimeSeriesSample {
                    data,
                    ..(*s).clone()
                };
                Ok(partition_patches(&normalized, patch_len)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_grids(&grids.iter().collect::<Vec<_>>())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.n_channels, self.n_patches, self.patch_len]
    }

    pub fn n_rows(&self) -> usize {
        self.batch * self.n_channels * self.n_patches
    }

    pub fn to_var<'g, T: Float>(&self, graph: &'g Graph<T>) -> Result<Var<'g, T>> {
        Ok(graph.constant(Tensor::from_f64(&self.shape(), &self.patches)?))
    }
}

#[derive(Clone, Debug)]
pub struct CBraModModel {
    pub config: CBraModConfig,
    pub convs: [Conv1d; 3],
    pub spectral: Linear,
    pub mask_token: ParamId,
    pub acpe_time: ParamId,
    pub acpe_channel: ParamId,
    pub blocks: Vec<CrissCrossBlock>,
    pub reconstruction: Linear,
}

impl CBraModModel {
    pub const NAMESPACE: &'static str = "cbramod";
    pub const ACPE_TIME_KERNEL: usize = 7;
    pub const ACPE_CHANNEL_KERNEL: usize = 3;

    /// Registers all parameters under `cbramod.*` and initializes them from `seed`.
    pub fn new<T: Float>(
        config: CBraModConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let ns = Self::NAMESPACE;
        let (t, d, w, k) = (
            config.patch_len,
            config.embed_dim,
            config.conv_channels,
            config.conv_kernel,
        );
        let widths = [(1, w), (w, w), (w, 1)];
        let convs = [0, 1, 2].map(|i| {
            let (c_in, c_out) = widths[i];
            Conv1d::new(
                store,
                &mut init,
                &format!("{ns}.embed.conv{i}"),
                c_in,
                c_out,
                k,
            )
        });
        let spectral = Linear::new(
            store,
            &mut init,
            &format!("{ns}.embed.spectral"),
            t,
            d,
            false,
        );
        let mask_token = store.add(format!("{ns}.mask_token"), init.normal(&[d], 0.02));
        let acpe_time = store.add(
            format!("{ns}.acpe.time"),
            init.fan_in(&[d, 1, Self::ACPE_TIME_KERNEL], Self::ACPE_TIME_KERNEL),
        );
        let acpe_channel = store.add(
            format!("{ns}.acpe.channel"),
            init.fan_in(
                &[d, Self::ACPE_CHANNEL_KERNEL, 1],
                Self::ACPE_CHANNEL_KERNEL,
            ),
        );
        let blocks = (0..config.n_blocks)
            .map(|i| CrissCrossBlock::new(store, &mut init, &format!("{ns}.blocks.{i}"), &config))
            .collect();
        let reconstruction =
            Linear::new(store, &mut init, &format!("{ns}.reconstruct"), d, t, false);
        Ok(CBraModModel {
            config,
            convs,
            spectral,
            mask_token,
            acpe_time,
            acpe_channel,
            blocks,
            reconstruction,
        })
    }

    pub fn feature_dim(&self, n_channels: usize, n_patches: usize) -> usize {
        n_channels * n_patches * self.config.embed_dim
    }

    /// Time-convolution plus spectral embedding of every patch: `[B, C, p, d]`.
    pub fn embed_patches<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        input: &CBraModInput,
    ) -> Result<Var<'g, T>> {
        let t = self.config.patch_len;
        if input.patch_len != t {
            return Err(Error::Config(format!(
                "patch length {} does not match the configured {t}",
                input.patch_len
            )));
        }
        let x = input.to_var(p.graph())?;
        let mut h = x.reshape(&[input.n_rows(), 1, t])?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(p, h)?;
            if i + 1 < self.convs.len() {
                h = h.gelu();
            }
        }
        let temporal = h.reshape(&input.shape())?;
        let spectral = self.spectral.forward(p, x.fft_magnitude())?;
        Ok(temporal.add(spectral)?)
    }

    /// Adds positional offsets from depthwise convolutions along patches and channels.
    pub fn acpe<'g, T: Float>(&self, p: &Bound<'g, T>, e: Var<'g, T>) -> Result<Var<'g, T>> {
        let time = e.depthwise_conv2d(p.var(self.acpe_time))?;
        let channel = e.depthwise_conv2d(p.var(self.acpe_channel))?;
        Ok(e.add(time)?.add(channel)?)
    }

    /// Embeds, optionally masks (one spec per sample), adds positions, runs the blocks.
    pub fn encode<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        input: &CBraModInput,
        masks: Option<&[MaskSpec]>,
    ) -> Result<Var<'g, T>> {
        let mut e = self.embed_patches(p, input)?;
        if let Some(masks) = masks {
            let flat = flatten_masks(masks, input)?;
            e = e.mask_rows(&flat, p.var(self.mask_token))?;
        }
        let mut x = self.acpe(p, e)?;
        for block in &self.blocks {
            x = block.forward(p, x)?;
        }
        Ok(x)
    }

    /// Shared bias-free map from embeddings back to patches.
    pub fn reconstruct<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        e_r: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        Ok(self.reconstruction.forward(p, e_r)?)
    }

    /// Flattens `[B, C, p, d]` to `[B, C·p·d]` in channel, patch, feature order.
    pub fn classify_features<'g, T: Float>(&self, e_r: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = e_r.shape();
        Ok(e_r.reshape(&[s[0], s[1..].iter().product()])?)
    }

    /// Eval-mode flattened features of one sample.
    pub fn features<T: Float>(
        &self,
        store: &ParamStore<T>,
        sample: &TimeSeriesSample,
    ) -> Result<Vec<T>> {
        let graph = Graph::new(Mode::Eval);
        let p = Bound::bind(&graph, store, false);
        let input = CBraModInput::from_samples(&[sample], self.config.patch_len)?;
        let e_r = self.encode(&p, &input, None)?;
        Ok(self.classify_features(e_r)?.value().data().to_vec())
    }
}

fn flatten_masks(masks: &[MaskSpec], input: &CBraModInput) -> Result<Vec<bool>> {
    if masks.len() != input.batch {
        return Err(Error::Data(format!(
            "{} masks for a batch of {}",
            masks.len(),
            input.batch
        )));
    }
    let mut flat = Vec::with_capacity(input.n_rows());
    for m in masks {
        if (m.n_channels, m.n_patches) != (input.n_channels, input.n_patches) {
            return Err(Error::Data(format!(
                "mask grid {}x{} does not match input {}x{}",
                m.n_channels, m.n_patches, input.n_channels, input.n_patches
            )));
        }
        flat.extend_from_slice(&m.mask);
    }
    Ok(flat)
}

/// Squared error over masked patches, divided by the number of masked entries.
pub fn mae_loss<'g, T: Float>(
    x_hat: Var<'g, T>,
    x: Var<'g, T>,
    masks: &[MaskSpec],
) -> Result<Var<'g, T>> {
    let s = x.shape();
    if x_hat.shape() != s || s.len() != 4 {
        return Err(Error::Tensor(crate::tensor::TensorError::shape(
            "mae_loss",
            format!("reconstruction {:?} vs target {s:?}", x_hat.shape()),
        )));
    }
    let t = s[3];
    let rows: usize = s[..3].iter().product();
    let flat: Vec<bool> = masks.iter().flat_map(|m| m.mask.iter().copied()).collect();
    if flat.len() != rows {
        return Err(Error::Data(format!(
            "{} mask rows for {rows} patches",
            flat.len()
        )));
    }
    let n_masked = flat.iter().filter(|&&m| m).count();
    if n_masked == 0 {
        return Err(Error::Data("no masked patches to reconstruct".into()));
    }
    let weights: Vec<f64> = flat
        .iter()
        .flat_map(|&m| std::iter::repeat(if m { 1.0 } else { 0.0 }).take(t))
        .collect();
    let w = x.graph().constant(Tensor::from_f64(&s, &weights)?);
    let sq = x_hat.sub(x)?.square().mul(w)?;
    Ok(sq.sum().scale(1.0 / (n_masked * t) as f64))
}
