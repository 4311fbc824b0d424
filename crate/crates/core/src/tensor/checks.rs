use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, softmax_attention, Graph, Result, Tensor, Var};

type CheckFn = for<'a> fn(&'a Graph<f64>, &[Var<'a, f64>]) -> Result<Var<'a, f64>>;

/// A scalar function of random inputs used to verify one differentiable op.
pub struct OpCheck {
    pub name: &'static str,
    pub shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    pub f: CheckFn,
}

impl OpCheck {
    /// Worst relative gradient error over `trials` random shapes drawn from `seed`.
    pub fn run(&self, seed: u64, trials: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let inputs: Vec<Tensor<f64>> = (self.shapes)(&mut rng)
                .iter()
                .map(|s| {
                    let n = s.iter().product();
                    Tensor::new(
                        s.clone(),
                        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    )
                })
                .collect::<Result<_>>()?;
            worst = worst.max(grad_check(self.f, &inputs, 1e-5)?);
        }
        Ok(worst)
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(1..4),
        rng.gen_range(1..5),
        rng.gen_range(2..6),
    )
}

/// One check per differentiable op.
pub fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            name: "add",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![c]]
            },
            f: |_, v| Ok(v[0].add(v[1])?.square().sum()),
        },
        OpCheck {
            name: "sub",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![b, c]]
            },
            f: |_, v| Ok(v[0].sub(v[1])?.square().sum()),
        },
        OpCheck {
            name: "mul",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![a, b, c]]
            },
            f: |_, v| Ok(v[0].mul(v[1])?.square().sum()),
        },
        OpCheck {
            name: "matmul",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![c, a + 1]]
            },
            f: |_, v| Ok(v[0].matmul(v[1])?.square().sum()),
        },
        OpCheck {
            name: "bmm",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![a, c, 3]]
            },
            f: |_, v| Ok(v[0].bmm(v[1])?.square().sum()),
        },
        OpCheck {
            name: "bmm_t",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![a, 3, c]]
            },
            f: |_, v| Ok(v[0].bmm_t(v[1])?.square().sum()),
        },
        OpCheck {
            name: "conv1d",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c + 4], vec![2, b, 3], vec![2]]
            },
            f: |_, v| {
                Ok(v[0]
                    .conv1d_padded(v[1], Some(v[2]), 1, 1, 1)?
                    .square()
                    .sum())
            },
        },
        OpCheck {
            name: "layer_norm",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![c], vec![c]]
            },
            f: |_, v| Ok(v[0].layer_norm(v[1], v[2], 1e-5)?.gelu().square().sum()),
        },
        OpCheck {
            name: "softmax_attention",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c], vec![a, b + 1, c], vec![a, b + 1, c]]
            },
            f: |_, v| Ok(softmax_attention(v[0], v[1], v[2])?.square().sum()),
        },
        OpCheck {
            name: "gelu_elu",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c]]
            },
            f: |_, v| Ok(v[0].scale(2.0).gelu().elu().square().sum()),
        },
        OpCheck {
            name: "dropout",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c]]
            },
            f: |_, v| Ok(v[0].dropout(0.4)?.square().sum()),
        },
        OpCheck {
            name: "mean_pool_concat",
            shapes: |r| {
                let (a, b, _) = dims(r);
                vec![vec![a, 4, b], vec![a, 2, b]]
            },
            f: |_, v| {
                let p = v[0].mean_pool(1, 2)?;
                Ok(Var::concat(&[p, v[1]], 1)?.square().sum())
            },
        },
        OpCheck {
            name: "permute_slice_select",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b + 1, c]]
            },
            f: |_, v| {
                let p = v[0].permute(&[2, 0, 1])?;
                let s = p.slice(2, 1, 1)?.square().sum();
                Ok(p.select(0, 1)?.square().sum().add(s)?)
            },
        },
        OpCheck {
            name: "broadcast_upsample",
            shapes: |r| {
                let (_, b, c) = dims(r);
                vec![vec![b, c]]
            },
            f: |_, v| {
                let s = v[0].shape();
                let big = v[0].broadcast_to(&[2, s[0], s[1]])?;
                Ok(big.upsample_repeat(2, 2)?.square().sum())
            },
        },
        OpCheck {
            name: "log_softmax_nll",
            shapes: |r| {
                let (a, _, c) = dims(r);
                vec![vec![a, c]]
            },
            f: |_, v| {
                let rows = v[0].shape()[0];
                let labels: Vec<usize> = (0..rows).map(|i| i % 2).collect();
                v[0].log_softmax().nll(&labels)
            },
        },
        OpCheck {
            name: "softmax_l2norm",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b, c]]
            },
            f: |g, v| {
                let s = v[0].shape();
                let w = g.constant(Tensor::full(&s, 0.3));
                Ok(v[0]
                    .softmax()
                    .mul(w)?
                    .sum()
                    .add(v[0].l2_normalize(1e-12).mul(w)?.square().sum())?)
            },
        },
        OpCheck {
            name: "depthwise_conv2d",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b + 1, c, 3], vec![3, 3, 1], vec![3, 1, 5]]
            },
            f: |_, v| {
                let t = v[0].depthwise_conv2d(v[2])?;
                Ok(v[0].depthwise_conv2d(v[1])?.add(t)?.square().sum())
            },
        },
        OpCheck {
            name: "mask_rows",
            shapes: |r| {
                let (a, b, c) = dims(r);
                vec![vec![a, b + 1, c], vec![c]]
            },
            f: |_, v| {
                let s = v[0].shape();
                let rows = s[0] * s[1];
                let mask: Vec<bool> = (0..rows).map(|i| i % 2 == 0).collect();
                Ok(v[0].mask_rows(&mask, v[1])?.square().sum())
            },
        },
    ]
}
