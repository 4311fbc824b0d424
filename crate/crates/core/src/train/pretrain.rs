use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbramod::{mae_loss, mask_patches, CBraModInput, CBraModModel, MaskSpec};
use crate::mantis::{augment, AugmentConfig, MantisInput, MantisModel};
use crate::nn::{Bound, ParamStore};
use crate::signal::TimeSeriesSample;
use crate::tensor::{mix, Float, Graph, Mode, Var};
use crate::{Error, Result};

use super::fit::{Clock, FitStatus, TrainConfig};
use super::loss::info_nce;
use super::optim::{clip_grad_norm, AdamW};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Contrastive,
    Mae,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(Objective::Contrastive),
            "mae" => Ok(Objective::Mae),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub objective: Objective,
    pub status: FitStatus,
    pub steps_run: usize,
    /// Training loss of every step, measured before its update.
    pub losses: Vec<f64>,
    pub wallclock_s: f64,
}

/// Random stream for one `(seed, step, purpose)` triple.
pub fn step_rng(seed: u64, step: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(step)) ^ stream))
}

const BATCH_STREAM: u64 = 1;
const VIEW_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;

fn draw_batch<'a>(
    data: &[&'a TimeSeriesSample],
    size: usize,
    seed: u64,
    step: u64,
) -> Vec<&'a TimeSeriesSample> {
    let mut rng = step_rng(seed, step, BATCH_STREAM);
    let n = size.min(data.len());
    sample(&mut rng, data.len(), n)
        .into_iter()
        .map(|i| data[i])
        .collect()
}

fn run_steps<T, F>(
    objective: Objective,
    store: &mut ParamStore<T>,
    data: &[&TimeSeriesSample],
    config: &TrainConfig,
    clock: &mut dyn Clock,
    loss_fn: F,
) -> Result<PretrainReport>
where
    T: Float,
    F: for<'g> Fn(&Bound<'g, T>, &[&TimeSeriesSample], u64) -> Result<Var<'g, T>>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("pretraining set is empty".into()));
    }
    let total = config.pretrain_steps as u64;
    let mut optimizer = AdamW::new(config.adamw(), store.tensors());
    let mut report = PretrainReport {
        objective,
        status: FitStatus::Converged,
        steps_run: 0,
        losses: Vec::with_capacity(config.pretrain_steps),
        wallclock_s: 0.0,
    };
    for step in 0..total {
        if clock.elapsed_s() >= config.max_wallclock_s() {
            report.status = FitStatus::TimeLimitExceeded;
            break;
        }
        let batch = draw_batch(data, config.batch_size, config.seed, step);
        let (loss, mut grads) = {
            let graph = Graph::with_seed(Mode::Train, config.seed, step);
            let p = Bound::bind(&graph, store, true);
            let loss = loss_fn(&p, &batch, step)?;
            let mut g = graph.backward(loss)?;
            (loss.item().as_f64(), p.grads(&mut g))
        };
        if !loss.is_finite() {
            return Err(Error::Data(format!(
                "non-finite pretraining loss at step {step}"
            )));
        }
        clip_grad_norm(&mut grads, config.clip_norm);
        optimizer.step(
            store.tensors_mut(),
            &grads,
            config.lr_for_update(step, total),
        )?;
        report.losses.push(loss);
        report.steps_run += 1;
    }
    report.wallclock_s = clock.elapsed_s();
    Ok(report)
}

/// Info-NCE between two augmented views of `batch`, views drawn from `rng_seed`.
pub fn contrastive_loss<'g, T: Float>(
    model: &MantisModel,
    p: &Bound<'g, T>,
    batch: &[&TimeSeriesSample],
    augment_config: &AugmentConfig,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var<'g, T>> {
    let views: Vec<TimeSeriesSample> = (0..2)
        .flat_map(|_| {
            batch
                .iter()
                .map(|s| augment(s, augment_config, rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let refs: Vec<&TimeSeriesSample> = views.iter().collect();
    let z = model.encode(p, &MantisInput::from_samples(&refs, &model.config)?)?;
    let n = batch.len();
    info_nce(z.slice(0, 0, n)?, z.slice(0, n, n)?, temperature)
}

/// Contrastive pretraining of a channel-independent encoder.
pub fn pretrain_contrastive<T: Float>(
    model: &MantisModel,
    store: &mut ParamStore<T>,
    data: &[&TimeSeriesSample],
    config: &TrainConfig,
    augment_config: &AugmentConfig,
    clock: &mut dyn Clock,
) -> Result<PretrainReport> {
    run_steps(
        Objective::Contrastive,
        store,
        data,
        config,
        clock,
        |p, batch, step| {
            let mut rng = step_rng(config.seed, step, VIEW_STREAM);
            contrastive_loss(
                model,
                p,
                batch,
                augment_config,
                config.temperature,
                &mut rng,
            )
        },
    )
}

/// Masks for every sample of a batch, a pure function of `(seed, step)`.
pub fn batch_masks(
    input: &CBraModInput,
    ratio: f64,
    seed: u64,
    step: u64,
) -> Result<Vec<MaskSpec>> {
    let mut rng = step_rng(seed, step, MASK_STREAM);
    (0..input.batch)
        .map(|_| mask_patches(input.n_channels, input.n_patches, ratio, &mut rng))
        .collect()
}

/// Masked reconstruction loss on `input` under `masks`.
pub fn reconstruction_loss<'g, T: Float>(
    model: &CBraModModel,
    p: &Bound<'g, T>,
    input: &CBraModInput,
    masks: &[MaskSpec],
) -> Result<Var<'g, T>> {
    let e_r = model.encode(p, input, Some(masks))?;
    let x_hat = model.reconstruct(p, e_r)?;
    mae_loss(x_hat, input.to_var(p.graph())?, masks)
}

/// Masked-autoencoding pretraining of a criss-cross encoder on standardized patches.
pub fn pretrain_mae<T: Float>(
    model: &CBraModModel,
    store: &mut ParamStore<T>,
    data: &[&TimeSeriesSample],
    config: &TrainConfig,
    clock: &mut dyn Clock,
) -> Result<PretrainReport> {
    run_steps(
        Objective::Mae,
        store,
        data,
        config,
        clock,
        |p, batch, step| {
            let input = CBraModInput::from_samples(batch, model.config.patch_len)?;
            let masks = batch_masks(&input, model.config.mask_ratio, config.seed, step)?;
            reconstruction_loss(model, p, &input, &masks)
        },
    )
}
