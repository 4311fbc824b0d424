use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::Metric;
use crate::nn::Bound;
use crate::signal::TimeSeriesSample;
use crate::tensor::{mix, Float, Graph, Mode};
use crate::{Error, Result};

use super::loss::cross_entropy;
use super::model::Classifier;
use super::optim::{clip_grad_norm, cosine_warmup_lr, AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub max_wallclock_hours: f64,
    pub seed: u64,
    pub temperature: f64,
    pub pretrain_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 20,
            batch_size: 64,
            weight_decay: 0.01,
            base_lr: 1e-3,
            warmup_frac: 0.2,
            clip_norm: 1.0,
            patience: 3,
            max_wallclock_hours: 5.0,
            seed: 0,
            temperature: 0.1,
            pretrain_steps: 500,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Motor-imagery protocol: 20 epochs, patience 3.
    pub fn bci() -> Self {
        Self::default()
    }

    /// Sleep-staging protocol: 50 epochs, patience 5.
    pub fn sleep() -> Self {
        TrainConfig {
            max_epochs: 50,
            patience: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("clip_norm", self.clip_norm),
            ("temperature", self.temperature),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "max_epochs, batch_size and patience must be positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.max_wallclock_hours >= 0.0) {
            return Err(Error::Config(
                "weight_decay and max_wallclock_hours must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac {} outside [0, 1)",
                self.warmup_frac
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn max_wallclock_s(&self) -> f64 {
        self.max_wallclock_hours * 3600.0
    }

    /// Learning rate for the update made at optimization step `step` (0-based):
    /// the schedule value at `step + 1`, so the first update is not a no-op.
    pub fn lr_for_update(&self, step: u64, total_steps: u64) -> f64 {
        cosine_warmup_lr(step + 1, total_steps, self.warmup_frac, self.base_lr)
    }
}

/// Seconds elapsed since the start of a run.
pub trait Clock {
    fn elapsed_s(&mut self) -> f64;
}

pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_s(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Deterministic clock advancing by `tick` seconds per reading.
pub struct TickClock {
    pub now: f64,
    pub tick: f64,
}

impl TickClock {
    pub fn new(tick: f64) -> Self {
        TickClock { now: 0.0, tick }
    }
}

impl Clock for TickClock {
    fn elapsed_s(&mut self) -> f64 {
        let t = self.now;
        self.now += self.tick;
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    EarlyStopped,
    TimeLimitExceeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(with = "nan_json")]
    pub val_loss: f64,
    #[serde(with = "nan_json")]
    pub val_weighted_f1: f64,
    pub lr: f64,
    pub wallclock_s: f64,
}

/// Serializes non-finite numbers as the string `"NaN"` so they survive JSON.
pub mod nan_json {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Score {
        Value(f64),
        Missing(String),
    }

    impl From<f64> for Score {
        fn from(v: f64) -> Self {
            if v.is_finite() {
                Score::Value(v)
            } else {
                Score::Missing("NaN".into())
            }
        }
    }

    impl From<Score> for f64 {
        fn from(s: Score) -> Self {
            match s {
                Score::Value(x) => x,
                Score::Missing(_) => f64::NAN,
            }
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Score::from(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Score::deserialize(d)?.into())
    }

    pub mod map {
        use super::*;

        pub fn serialize<S: Serializer>(
            map: &BTreeMap<String, f64>,
            s: S,
        ) -> Result<S::Ok, S::Error> {
            let out: BTreeMap<&String, Score> = map.iter().map(|(k, &v)| (k, v.into())).collect();
            out.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<BTreeMap<String, f64>, D::Error> {
            let raw = BTreeMap::<String, Score>::deserialize(d)?;
            Ok(raw.into_iter().map(|(k, v)| (k, v.into())).collect())
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub status: FitStatus,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Lowest validation cross-entropy (NaN if no epoch finished).
    #[serde(with = "nan_json")]
    pub best_val_metric: f64,
    #[serde(with = "nan_json::map")]
    pub test_metrics: BTreeMap<String, f64>,
    pub wallclock_s: f64,
    pub history: Vec<EpochRecord>,
    /// Split reads in order, e.g. `train:1`, `val:1`, ..., `test`.
    pub access_log: Vec<String>,
    /// Training-set indices of the first optimization step.
    pub first_batch: Vec<usize>,
}

impl FitReport {
    /// History as CSV with columns `epoch,train_loss,val_loss,lr,wallclock_s`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr,wallclock_s\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.lr, r.wallclock_s
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with every timing field zeroed, for run-to-run comparisons.
    pub fn canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.wallclock_s = 0.0;
        copy.history.iter_mut().for_each(|r| r.wallclock_s = 0.0);
        copy.to_json()
    }
}

/// Patience-based stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch; returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

/// Train/validation/test partitions of labeled samples.
#[derive(Clone, Debug)]
pub struct DataSplits<'a> {
    pub train: Vec<&'a TimeSeriesSample>,
    pub val: Vec<&'a TimeSeriesSample>,
    pub test: Vec<&'a TimeSeriesSample>,
}

impl DataSplits<'_> {
    /// Rejects empty splits and any subject shared between splits.
    pub fn check(&self) -> Result<()> {
        let named = [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ];
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (split, samples) in named {
            if samples.is_empty() {
                return Err(Error::Data(format!("{split} split is empty")));
            }
            let subjects: BTreeSet<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
            for subject in subjects {
                if let Some(prev) = owner.insert(subject, split) {
                    return Err(Error::Data(format!(
                        "subject {subject} appears in both {prev} and {split} splits"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch shuffle of `0..n`, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(epoch as u64)));
    order.shuffle(&mut rng);
    order
}

/// Optimization state shared across epochs of one run.
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub step: u64,
    pub total_steps: u64,
    pub last_lr: f64,
}

impl Trainer {
    pub fn new<T: Float>(
        model: &Classifier<T>,
        config: &TrainConfig,
        n_train: usize,
    ) -> Result<Self> {
        config.validate()?;
        let per_epoch = n_train.div_ceil(config.batch_size) as u64;
        Ok(Trainer {
            config: config.clone(),
            optimizer: AdamW::new(config.adamw(), model.store.tensors()),
            step: 0,
            total_steps: per_epoch * config.max_epochs as u64,
            last_lr: 0.0,
        })
    }

    /// One optimization step on `batch`; returns the batch loss.
    pub fn step<T: Float>(
        &mut self,
        model: &mut Classifier<T>,
        batch: &[&TimeSeriesSample],
    ) -> Result<f64> {
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let (loss, mut grads) = {
            let graph = Graph::with_seed(Mode::Train, self.config.seed, self.step);
            let p = Bound::bind(&graph, &model.store, true);
            let loss = cross_entropy(model.logits(&p, batch)?, &labels)?;
            let mut g = graph.backward(loss)?;
            (loss.item().as_f64(), p.grads(&mut g))
        };
        if !loss.is_finite() {
            return Err(Error::Data(format!(
                "non-finite training loss at step {}",
                self.step
            )));
        }
        clip_grad_norm(&mut grads, self.config.clip_norm);
        let lr = self.config.lr_for_update(self.step, self.total_steps);
        self.optimizer.step(model.store.tensors_mut(), &grads, lr)?;
        self.last_lr = lr;
        self.step += 1;
        Ok(loss)
    }

    /// One pass over `train` in the epoch's shuffled order. Returns `None` if
    /// `out_of_time` fires before a step.
    pub fn epoch<T: Float>(
        &mut self,
        model: &mut Classifier<T>,
        train: &[&TimeSeriesSample],
        epoch: usize,
        mut out_of_time: impl FnMut() -> bool,
        mut on_batch: impl FnMut(&[usize]),
    ) -> Result<Option<f64>> {
        let order = epoch_order(train.len(), self.config.seed, epoch);
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            if out_of_time() {
                return Ok(None);
            }
            on_batch(idx);
            let batch: Vec<&TimeSeriesSample> = idx.iter().map(|&i| train[i]).collect();
            total += self.step(model, &batch)? * idx.len() as f64;
        }
        Ok(Some(total / train.len() as f64))
    }
}

/// Full fine-tuning with early stopping on validation cross-entropy, best-weight
/// restoration, and a wall-clock cap. Test data is read only once, at the end.
pub fn fit<T: Float>(
    model: &mut Classifier<T>,
    splits: &DataSplits<'_>,
    config: &TrainConfig,
    clock: &mut dyn Clock,
) -> Result<FitReport> {
    config.validate()?;
    splits.check()?;
    let cap = config.max_wallclock_s();
    let mut trainer = Trainer::new(model, config, splits.train.len())?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_store = model.store.clone();
    let mut report = FitReport {
        status: FitStatus::Converged,
        epochs_run: 0,
        best_epoch: 0,
        best_val_metric: f64::NAN,
        test_metrics: BTreeMap::new(),
        wallclock_s: 0.0,
        history: Vec::new(),
        access_log: Vec::new(),
        first_batch: Vec::new(),
    };

    for epoch in 1..=config.max_epochs {
        report.access_log.push(format!("train:{epoch}"));
        let mut first = std::mem::take(&mut report.first_batch);
        let train_loss = trainer.epoch(
            model,
            &splits.train,
            epoch,
            || clock.elapsed_s() >= cap,
            |idx| {
                if first.is_empty() {
                    first = idx.to_vec();
                }
            },
        )?;
        report.first_batch = first;
        let Some(train_loss) = train_loss else {
            report.status = FitStatus::TimeLimitExceeded;
            break;
        };
        report.access_log.push(format!("val:{epoch}"));
        let val = model.evaluate(&splits.val, config.batch_size)?;
        report.epochs_run = epoch;
        report.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_weighted_f1: val.metric(Metric::WeightedF1),
            lr: trainer.last_lr,
            wallclock_s: clock.elapsed_s(),
        });
        let (improved, stop) = stopper.update(epoch, val.loss);
        if improved {
            best_store = model.store.clone();
        }
        if stop {
            report.status = FitStatus::EarlyStopped;
            break;
        }
    }

    if report.epochs_run > 0 {
        model.store = best_store;
        report.best_epoch = stopper.best_epoch;
        report.best_val_metric = stopper.best;
    }
    if report.status == FitStatus::TimeLimitExceeded {
        report.test_metrics = Metric::ALL
            .iter()
            .map(|m| (m.name().to_string(), f64::NAN))
            .collect();
    } else {
        report.access_log.push("test".into());
        let test = model.evaluate(&splits.test, config.batch_size)?;
        report.test_metrics = Metric::ALL
            .iter()
            .map(|&m| (m.name().to_string(), test.metric(m)))
            .collect();
    }
    report.wallclock_s = clock.elapsed_s();
    Ok(report)
}
