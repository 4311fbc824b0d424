use crate::nn::{Bound, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::tensor::{Float, Result, TensorError, Var};

use super::CBraModConfig;

/// Parallel attention over channels (per patch index) and over patches (per
/// channel), concatenated and merged back to the embedding width, followed by
/// a pre-norm MLP. Both attentions omit an output projection; the merge layer
/// plays that role.
#[derive(Clone, Debug)]
pub struct CrissCrossBlock {
    pub norm1: LayerNorm,
    pub spatial: MultiHeadAttention,
    pub temporal: MultiHeadAttention,
    pub merge: Linear,
    pub norm2: LayerNorm,
    pub mlp: FeedForward,
    pub dropout: f64,
}

impl CrissCrossBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        config: &CBraModConfig,
    ) -> Self {
        let d = config.embed_dim;
        let k = config.n_heads;
        CrissCrossBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            spatial: MultiHeadAttention::new(store, init, &format!("{name}.spatial"), d, k, false),
            temporal: MultiHeadAttention::new(
                store,
                init,
                &format!("{name}.temporal"),
                d,
                k,
                false,
            ),
            merge: Linear::new(store, init, &format!("{name}.merge"), 2 * d, d, true),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            mlp: FeedForward::new(
                store,
                init,
                &format!("{name}.mlp"),
                d,
                config.mlp_ratio * d,
                config.dropout,
            ),
            dropout: config.dropout,
        }
    }

    /// Channel-axis attention on `[B, C, p, d]`.
    pub fn spatial_attention<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        h: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let s = h.shape();
        let (b, c, n, d) = (s[0], s[1], s[2], s[3]);
        let rows = h.permute(&[0, 2, 1, 3])?.reshape(&[b * n, c, d])?;
        self.spatial
            .forward(p, rows)?
            .reshape(&[b, n, c, d])?
            .permute(&[0, 2, 1, 3])
    }

    /// Patch-axis attention on `[B, C, p, d]`.
    pub fn temporal_attention<'g, T: Float>(
        &self,
        p: &Bound<'g, T>,
        h: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let s = h.shape();
        let (b, c, n, d) = (s[0], s[1], s[2], s[3]);
        let rows = h.reshape(&[b * c, n, d])?;
        self.temporal.forward(p, rows)?.reshape(&[b, c, n, d])
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        if x.shape().len() != 4 {
            return Err(TensorError::shape(
                "crisscross_block",
                format!(
                    "expected [batch, channels, patches, dim], got {:?}",
                    x.shape()
                ),
            ));
        }
        let h = self.norm1.forward(p, x)?;
        let s = self.spatial_attention(p, h)?;
        let t = self.temporal_attention(p, h)?;
        let merged = self
            .merge
            .forward(p, Var::concat(&[s, t], 3)?)?
            .dropout(self.dropout)?;
        let x = x.add(merged)?;
        let m = self.mlp.forward(p, self.norm2.forward(p, x)?)?;
        x.add(m)
    }
}
