use crate::tensor::{softmax_attention, Float, Result, Tensor, TensorError, Var};

use super::{Bound, Init, ParamId, ParamStore};

/// `y = x · W + b` with `W: [in, out]` applied over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init.fan_in(&[in_dim, out_dim], in_dim),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), init.fan_in(&[out_dim], in_dim)));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.matmul(p.var(self.weight))?;
        match self.bias {
            Some(b) => y.add(p.var(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.layer_norm(p.var(self.gamma), p.var(self.beta), self.eps)
    }
}

/// 1D convolution with asymmetric "same" padding for even kernels
/// (`left = (k − 1) / 2`, `right = k − 1 − left`).
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Self {
        let fan_in = c_in * kernel;
        Conv1d {
            weight: store.add(
                format!("{name}.weight"),
                init.fan_in(&[c_out, c_in, kernel], fan_in),
            ),
            bias: store.add(format!("{name}.bias"), init.fan_in(&[c_out], fan_in)),
            kernel,
        }
    }

    pub fn same_padding(&self) -> (usize, usize) {
        let left = (self.kernel - 1) / 2;
        (left, self.kernel - 1 - left)
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let (l, r) = self.same_padding();
        x.conv1d_padded(p.var(self.weight), Some(p.var(self.bias)), 1, l, r)
    }
}

/// Multi-head scaled dot-product self-attention over `[batch, n, d]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Option<Linear>,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        n_heads: usize,
        out_projection: bool,
    ) -> Self {
        assert!(
            dim % n_heads == 0,
            "dim {dim} not divisible by {n_heads} heads"
        );
        MultiHeadAttention {
            query: Linear::new(store, init, &format!("{name}.query"), dim, dim, true),
            key: Linear::new(store, init, &format!("{name}.key"), dim, dim, true),
            value: Linear::new(store, init, &format!("{name}.value"), dim, dim, true),
            out: out_projection
                .then(|| Linear::new(store, init, &format!("{name}.out"), dim, dim, true)),
            n_heads,
        }
    }

    fn split_heads<'g, T: Float>(&self, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        let (b, n, d) = (s[0], s[1], s[2]);
        let h = self.n_heads;
        x.reshape(&[b, n, h, d / h])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * h, n, d / h])
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(TensorError::shape(
                "attention",
                format!("expected [batch, tokens, dim], got {s:?}"),
            ));
        }
        let (b, n, d) = (s[0], s[1], s[2]);
        let q = self.split_heads(self.query.forward(p, x)?)?;
        let k = self.split_heads(self.key.forward(p, x)?)?;
        let v = self.split_heads(self.value.forward(p, x)?)?;
        let h = self.n_heads;
        let merged = softmax_attention(q, k, v)?
            .reshape(&[b, h, n, d / h])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, d])?;
        match &self.out {
            Some(out) => out.forward(p, merged),
            None => Ok(merged),
        }
    }
}

/// Two-layer GELU MLP with dropout after each layer.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
    ) -> Self {
        FeedForward {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), dim, hidden, true),
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, dim, true),
            dropout,
        }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.fc1.forward(p, x)?.gelu().dropout(self.dropout)?;
        self.fc2.forward(p, h)?.dropout(self.dropout)
    }
}

/// Pre-norm encoder block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: FeedForward,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        name: &str,
        dim: usize,
        n_heads: usize,
        mlp_hidden: usize,
        dropout: f64,
    ) -> Self {
        TransformerBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), dim, n_heads, true),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            mlp: FeedForward::new(
                store,
                init,
                &format!("{name}.mlp"),
                dim,
                mlp_hidden,
                dropout,
            ),
            dropout,
        }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self
            .attn
            .forward(p, self.norm1.forward(p, x)?)?
            .dropout(self.dropout)?;
        let x = x.add(a)?;
        let m = self.mlp.forward(p, self.norm2.forward(p, x)?)?;
        x.add(m)
    }
}
