use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cbramod::{mae_loss, CBraModConfig, MaskSpec};
use crate::mantis::MantisConfig;
use crate::nn::{Bound, Init, ParamStore};
use crate::signal::TimeSeriesSample;
use crate::tensor::{grad_check, grad_check_coords, op_checks, Tensor, Var};
use crate::train::{
    cross_entropy, info_nce, Classifier, EncoderConfig, Head, HeadConfig, HeadKind,
};
use crate::{Error, Result};

pub const TOLERANCE: f64 = 1e-4;
pub const SEEDS: [u64; 3] = [0, 1, 2];
const STEP: f64 = 1e-5;
/// Parameter elements probed per tensor in the end-to-end model checks.
const COORDS_PER_TENSOR: usize = 16;

type CheckRun = Box<dyn Fn(u64) -> Result<f64> + Send + Sync>;

pub struct GradCheck {
    pub name: String,
    pub module: &'static str,
    run: CheckRun,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub module: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub seconds: f64,
    pub passed: bool,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {}/{} seed {}: max rel error {:.3e} ({:.2}s)",
            if self.passed { "ok  " } else { "FAIL" },
            self.module,
            self.name,
            self.seed,
            self.max_rel_error,
            self.seconds
        )
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Ok(Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?)
}

fn random_samples(
    rng: &mut ChaCha8Rng,
    n: usize,
    c: usize,
    t: usize,
) -> Result<Vec<TimeSeriesSample>> {
    (0..n)
        .map(|i| {
            let data = (0..c * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Ok(TimeSeriesSample::new(
                data,
                c,
                100.0,
                i % 2,
                format!("S{i}"),
            )?)
        })
        .collect()
}

/// A few random elements of every tensor in `store`.
fn sampled_coords(store: &ParamStore<f64>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    store
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            let k = COORDS_PER_TENSOR.min(t.numel());
            sample(rng, t.numel(), k)
                .into_iter()
                .map(move |j| (i, j))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Cross-entropy of a full classifier, differentiated with respect to sampled parameters.
fn classifier_check(encoder: EncoderConfig, series_len: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = HeadConfig {
        kind: HeadKind::LinearPreln,
        ..HeadConfig::default()
    };
    let model = Classifier::<f64>::new(&encoder, &head, 2, series_len, 2, seed)?;
    let samples = random_samples(&mut rng, 2, 2, series_len)?;
    let refs: Vec<&TimeSeriesSample> = samples.iter().collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let coords = sampled_coords(&model.store, &mut rng);
    grad_check_coords(
        |g, vars| {
            let p = Bound::from_vars(g, vars);
            cross_entropy(model.logits(&p, &refs)?, &labels)
        },
        model.store.tensors(),
        STEP,
        &coords,
    )
}

fn head_check(kind: HeadKind, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let config = HeadConfig {
        kind,
        hidden: [6, 5],
        dropout: 0.1,
    };
    let head = Head::new(&mut store, &mut Init { rng: &mut rng }, &config, 7, 3)?;
    let mut inputs = store.tensors().to_vec();
    inputs.push(random_tensor(&mut rng, &[4, 7])?);
    let labels = [0, 2, 1, 2];
    grad_check(
        |g, vars| {
            let (params, z) = vars.split_at(vars.len() - 1);
            let p = Bound::from_vars(g, params);
            cross_entropy(head.forward(&p, z[0])?, &labels)
        },
        &inputs,
        STEP,
    )
}

fn loss_check(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "info_nce" => {
            let inputs = [
                random_tensor(&mut rng, &[5, 4])?,
                random_tensor(&mut rng, &[5, 4])?,
            ];
            grad_check(
                |_, v: &[Var<'_, f64>]| info_nce(v[0], v[1], 0.1),
                &inputs,
                STEP,
            )
        }
        "cross_entropy" => {
            let inputs = [random_tensor(&mut rng, &[6, 4])?];
            let labels = [0, 1, 2, 3, 1, 0];
            grad_check(
                |_, v: &[Var<'_, f64>]| cross_entropy(v[0], &labels),
                &inputs,
                STEP,
            )
        }
        _ => {
            let inputs = [
                random_tensor(&mut rng, &[2, 2, 3, 4])?,
                random_tensor(&mut rng, &[2, 2, 3, 4])?,
            ];
            let masks: Vec<MaskSpec> = (0..2)
                .map(|_| crate::cbramod::mask_patches(2, 3, 0.5, &mut rng))
                .collect::<Result<_>>()?;
            grad_check(
                |_, v: &[Var<'_, f64>]| mae_loss(v[0], v[1], &masks),
                &inputs,
                STEP,
            )
        }
    }
}

/// Every registered check: each differentiable op, both mini models end to
/// end, both heads, and the three losses.
pub fn registry() -> Vec<GradCheck> {
    let mut checks: Vec<GradCheck> = op_checks()
        .into_iter()
        .map(|c| GradCheck {
            name: c.name.to_string(),
            module: "tensor",
            run: Box::new(move |seed| Ok(c.run(seed, 10)?)),
        })
        .collect();
    checks.push(GradCheck {
        name: "mantis_mini".into(),
        module: "mantis",
        run: Box::new(|seed| {
            classifier_check(EncoderConfig::Mantis(MantisConfig::mini()), 100, seed)
        }),
    });
    checks.push(GradCheck {
        name: "cbramod_mini".into(),
        module: "cbramod",
        run: Box::new(|seed| {
            classifier_check(EncoderConfig::Cbramod(CBraModConfig::mini()), 80, seed)
        }),
    });
    for kind in [HeadKind::LinearPreln, HeadKind::Mlp3] {
        checks.push(GradCheck {
            name: format!("head_{kind}"),
            module: "train",
            run: Box::new(move |seed| head_check(kind, seed)),
        });
    }
    for name in ["info_nce", "cross_entropy", "mae_loss"] {
        checks.push(GradCheck {
            name: name.into(),
            module: "train",
            run: Box::new(move |seed| loss_check(name, seed)),
        });
    }
    checks
}

pub fn module_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = registry().iter().map(|c| c.module).collect();
    names.dedup();
    names
}

/// Runs the checks whose module or name equals `filter` (all when `None`) for every seed.
pub fn run_checks(filter: Option<&str>) -> Result<Vec<CheckResult>> {
    let selected: Vec<GradCheck> = registry()
        .into_iter()
        .filter(|c| filter.map_or(true, |f| c.module == f || c.name == f))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "no gradient checks match {:?}; modules are {:?}",
            filter.unwrap_or_default(),
            module_names()
        )));
    }
    let jobs: Vec<(&GradCheck, u64)> = selected
        .iter()
        .flat_map(|c| SEEDS.iter().map(move |&s| (c, s)))
        .collect();
    jobs.into_par_iter()
        .map(|(check, seed)| {
            let start = Instant::now();
            let err = (check.run)(seed)?;
            Ok(CheckResult {
                name: check.name.clone(),
                module: check.module,
                seed,
                max_rel_error: err,
                seconds: start.elapsed().as_secs_f64(),
                passed: err < TOLERANCE,
            })
        })
        .collect()
}
