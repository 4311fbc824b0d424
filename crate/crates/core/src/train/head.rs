use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{Bound, Init, LayerNorm, Linear, ParamStore};
use crate::tensor::{Float, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    LinearPreln,
    Mlp3,
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_preln" => Ok(HeadKind::LinearPreln),
            "mlp3" => Ok(HeadKind::Mlp3),
            other => Err(Error::Config(format!("unknown head {other:?}"))),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::LinearPreln => "linear_preln",
            HeadKind::Mlp3 => "mlp3",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Widths of the two hidden layers of `mlp3`.
    pub hidden: [usize; 2],
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            kind: HeadKind::Mlp3,
            hidden: [128, 64],
            dropout: 0.1,
        }
    }
}

/// Classification head on flattened encoder features.
#[derive(Clone, Debug)]
pub enum Head {
    LinearPreln { norm: LayerNorm, linear: Linear },
    Mlp3 { layers: [Linear; 3], dropout: f64 },
}

impl Head {
    pub const NAMESPACE: &'static str = "head";

    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init<'_>,
        config: &HeadConfig,
        in_dim: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if in_dim == 0 || n_classes < 2 || config.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "head needs positive widths and at least two classes (in {in_dim}, classes {n_classes}, hidden {:?})",
                config.hidden
            )));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!(
                "head dropout {} outside [0, 1)",
                config.dropout
            )));
        }
        let ns = Self::NAMESPACE;
        Ok(match config.kind {
            HeadKind::LinearPreln => Head::LinearPreln {
                norm: LayerNorm::new(store, &format!("{ns}.norm"), in_dim),
                linear: Linear::new(
                    store,
                    init,
                    &format!("{ns}.linear"),
                    in_dim,
                    n_classes,
                    true,
                ),
            },
            HeadKind::Mlp3 => {
                let [h1, h2] = config.hidden;
                let dims = [(in_dim, h1), (h1, h2), (h2, n_classes)];
                Head::Mlp3 {
                    layers: [0, 1, 2].map(|i| {
                        let (a, b) = dims[i];
                        Linear::new(store, init, &format!("{ns}.fc{i}"), a, b, true)
                    }),
                    dropout: config.dropout,
                }
            }
        })
    }

    /// Logits `[batch, n_classes]` from features `[batch, in_dim]`.
    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, T>, z: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(match self {
            Head::LinearPreln { norm, linear } => linear.forward(p, norm.forward(p, z)?)?,
            Head::Mlp3 { layers, dropout } => {
                let mut h = z;
                for layer in &layers[..2] {
                    h = layer.forward(p, h)?.elu().dropout(*dropout)?;
                }
                layers[2].forward(p, h)?
            }
        })
    }
}
