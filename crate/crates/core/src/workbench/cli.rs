use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::cbramod::CBraModModel;
use crate::mantis::MantisModel;
use crate::metrics::Metric;
use crate::nn::ParamStore;
use crate::train::{
    fit, pretrain_contrastive, pretrain_mae, Classifier, DataSplits, FitReport, FitStatus,
    HeadKind, ModelKind, Objective, WallClock,
};
use crate::{Error, Result};

use super::checkpoint::{Checkpoint, ClassifierShape, Provenance};
use super::config::RunConfig;
use super::dataset::Dataset;
use super::gradcheck::run_checks;
use super::synth::{gen_synthetic, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TIME_LIMIT: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "tsfm",
    version,
    about = "Pretrain, fine-tune and evaluate time-series encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset described by a JSON spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised pretraining; writes a checkpoint plus report and loss CSV.
    Pretrain {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        objective: Objective,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised fine-tuning with subject-wise splits.
    Finetune {
        #[arg(long)]
        model: ModelKind,
        /// `random` or a pretraining checkpoint path.
        #[arg(long, default_value = "random")]
        init: String,
        #[arg(long, default_value = "mlp3")]
        head: HeadKind,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
        seed: u64,
        /// Run seeds 0..N and report mean ± std.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        /// Save the fine-tuned classifier here (single-seed runs only).
        #[arg(long, conflicts_with = "seeds")]
        out: Option<PathBuf>,
    },
    /// Score a fine-tuned checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated metric names.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "balanced_accuracy,cohens_kappa,weighted_f1"
        )]
        metrics: Vec<Metric>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the registered gradient checks.
    Gradcheck {
        /// Restrict to one module (tensor, mantis, cbramod, train) or one check name.
        #[arg(long)]
        module: Option<String>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Wall-clock cap in hours; overrides the config file.
    #[arg(long)]
    max_hours: Option<f64>,
}

impl RunArgs {
    fn load(&self, seed: u64) -> Result<(RunConfig, Dataset)> {
        let mut config = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(h) = self.max_hours {
            config.train.max_wallclock_hours = h;
        }
        config.train.seed = seed;
        config.train.validate()?;
        Ok((config, Dataset::load(&self.data)?))
    }
}

/// `path` with its extension replaced by `ext`.
fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(spec: &Path, out: &Path) -> Result<i32> {
    let text = fs::read_to_string(spec)
        .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", spec.display())))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid spec: {e}")))?;
    let dataset = gen_synthetic(&spec)?;
    dataset.save(out)?;
    println!(
        "wrote {} samples ({} subjects, {} classes) to {}",
        dataset.manifest.n_samples,
        spec.n_subjects,
        dataset.manifest.n_classes(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn pretrain(
    model: ModelKind,
    objective: Objective,
    run: &RunArgs,
    seed: u64,
    out: &Path,
) -> Result<i32> {
    let (config, dataset) = run.load(seed)?;
    let encoder = config.encoder(model);
    let mut store = ParamStore::<f32>::new();
    let data: Vec<_> = dataset.samples.iter().collect();
    let mut clock = WallClock::start();
    let report = match (model, objective) {
        (ModelKind::Mantis, Objective::Contrastive) => {
            let m = MantisModel::new(config.mantis.clone(), &mut store, seed)?;
            pretrain_contrastive(
                &m,
                &mut store,
                &data,
                &config.train,
                &config.augment,
                &mut clock,
            )?
        }
        (ModelKind::Cbramod, Objective::Mae) => {
            let m = CBraModModel::new(config.cbramod.clone(), &mut store, seed)?;
            pretrain_mae(&m, &mut store, &data, &config.train, &mut clock)?
        }
        (m, o) => {
            return Err(Error::Config(format!(
                "{m} is pretrained with {}, not {o:?}",
                if m == ModelKind::Mantis {
                    "contrastive"
                } else {
                    "mae"
                }
            )))
        }
    };
    let ckpt = Checkpoint {
        provenance: Provenance::new(&encoder, seed, report.steps_run as u64)?,
        store,
    };
    ckpt.save(out)?;
    write(
        &sidecar(out, "report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    let csv: String = std::iter::once("step,loss\n".to_string())
        .chain(
            report
                .losses
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{i},{l}\n")),
        )
        .collect();
    write(&sidecar(out, "history.csv"), &csv)?;
    println!("{}", ckpt.summary());
    println!(
        "status {:?}, {} steps, final loss {:.4}",
        report.status,
        report.steps_run,
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(if report.status == FitStatus::TimeLimitExceeded {
        EXIT_TIME_LIMIT
    } else {
        EXIT_OK
    })
}

/// Mean and sample standard deviation, both ×100.
#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    #[serde(with = "crate::train::nan_json")]
    pub mean: f64,
    #[serde(with = "crate::train::nan_json")]
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> SeedSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    SeedSummary {
        mean: 100.0 * mean,
        std: 100.0 * std,
    }
}

#[derive(Serialize)]
struct MultiSeedReport {
    seeds: Vec<u64>,
    summary: BTreeMap<String, SeedSummary>,
    runs: Vec<FitReport>,
}

struct FinetuneRun {
    report: FitReport,
    model: Classifier<f32>,
    loaded: Option<usize>,
}

fn finetune_one(
    model: ModelKind,
    init: &str,
    head: HeadKind,
    run: &RunArgs,
    seed: u64,
) -> Result<FinetuneRun> {
    let (config, dataset) = run.load(seed)?;
    let splits = config.split.apply(&dataset.manifest)?;
    let m = &dataset.manifest;
    let head_config = crate::train::HeadConfig {
        kind: head,
        ..config.head.clone()
    };
    let mut classifier = Classifier::<f32>::new(
        &config.encoder(model),
        &head_config,
        m.n_channels,
        m.series_length,
        m.n_classes(),
        seed,
    )?;
    let loaded = if init == "random" {
        None
    } else {
        let ckpt = Checkpoint::load(Path::new(init))?;
        if ckpt.provenance.model_kind != model {
            return Err(Error::Data(format!(
                "checkpoint holds a {} encoder, not {model}",
                ckpt.provenance.model_kind
            )));
        }
        Some(classifier.load_encoder(&ckpt.store)?)
    };
    let data = DataSplits {
        train: dataset.select(&splits.train),
        val: dataset.select(&splits.val),
        test: dataset.select(&splits.test),
    };
    let report = fit(
        &mut classifier,
        &data,
        &config.train,
        &mut WallClock::start(),
    )?;
    Ok(FinetuneRun {
        report,
        model: classifier,
        loaded,
    })
}

fn print_metrics(metrics: &BTreeMap<String, f64>) {
    for (name, v) in metrics {
        println!("  {name}: {:.2}", 100.0 * v);
    }
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    model: ModelKind,
    init: &str,
    head: HeadKind,
    run: &RunArgs,
    seed: u64,
    seeds: Option<u64>,
    report_path: &Path,
    out: Option<&Path>,
) -> Result<i32> {
    let Some(n) = seeds else {
        let r = finetune_one(model, init, head, run, seed)?;
        if let Some(count) = r.loaded {
            println!("initialized {count} encoder tensors from {init}");
        }
        write(report_path, &r.report.to_json()?)?;
        write(&sidecar(report_path, "csv"), &r.report.history_csv())?;
        println!(
            "status {:?}, {} epochs, best epoch {}",
            r.report.status, r.report.epochs_run, r.report.best_epoch
        );
        print_metrics(&r.report.test_metrics);
        if let Some(out) = out {
            let (config, dataset) = run.load(seed)?;
            let mut provenance =
                Provenance::new(&config.encoder(model), seed, r.report.epochs_run as u64)?;
            provenance.classifier = Some(ClassifierShape {
                head: crate::train::HeadConfig {
                    kind: head,
                    ..config.head
                },
                n_channels: dataset.manifest.n_channels,
                series_length: dataset.manifest.series_length,
                n_classes: dataset.manifest.n_classes(),
            });
            let ckpt = Checkpoint {
                provenance,
                store: r.model.store,
            };
            ckpt.save(out)?;
            println!("{}", ckpt.summary());
        }
        return Ok(status_code(&[r.report.status]));
    };
    if n == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n).collect();
    let runs: Vec<FitReport> = seeds
        .par_iter()
        .map(|&s| finetune_one(model, init, head, run, s).map(|r| r.report))
        .collect::<Result<_>>()?;
    let names: Vec<String> = runs[0].test_metrics.keys().cloned().collect();
    let summary: BTreeMap<String, SeedSummary> = names
        .into_iter()
        .map(|k| {
            let vals: Vec<f64> = runs.iter().map(|r| r.test_metrics[&k]).collect();
            (k, summarize(&vals))
        })
        .collect();
    for (s, r) in seeds.iter().zip(&runs) {
        write(
            &sidecar(report_path, &format!("seed{s}.csv")),
            &r.history_csv(),
        )?;
    }
    println!("test metrics over {n} seeds (mean ± std, ×100):");
    for (k, v) in &summary {
        println!("  {k}: {:.2} ± {:.2}", v.mean, v.std);
    }
    let statuses: Vec<FitStatus> = runs.iter().map(|r| r.status).collect();
    let multi = MultiSeedReport {
        seeds,
        summary,
        runs,
    };
    write(report_path, &serde_json::to_string_pretty(&multi)?)?;
    Ok(status_code(&statuses))
}

fn status_code(statuses: &[FitStatus]) -> i32 {
    if statuses.contains(&FitStatus::TimeLimitExceeded) {
        EXIT_TIME_LIMIT
    } else {
        EXIT_OK
    }
}

fn evaluate(ckpt: &Path, data: &Path, metrics: &[Metric], report: Option<&Path>) -> Result<i32> {
    let ckpt = Checkpoint::load(ckpt)?;
    let shape = ckpt.provenance.classifier.clone().ok_or_else(|| {
        Error::Data(
            "checkpoint has no classification head; evaluate needs a fine-tuned checkpoint".into(),
        )
    })?;
    println!("{}", ckpt.summary());
    let dataset = Dataset::load(data)?;
    let m = &dataset.manifest;
    if (m.n_channels, m.series_length, m.n_classes())
        != (shape.n_channels, shape.series_length, shape.n_classes)
    {
        return Err(Error::Data(format!(
            "dataset is {}x{} with {} classes, checkpoint expects {}x{} with {}",
            m.n_channels,
            m.series_length,
            m.n_classes(),
            shape.n_channels,
            shape.series_length,
            shape.n_classes
        )));
    }
    let mut model = Classifier::<f32>::new(
        &ckpt.provenance.encoder,
        &shape.head,
        shape.n_channels,
        shape.series_length,
        shape.n_classes,
        ckpt.provenance.seed,
    )?;
    model.store.load_strict(&ckpt.store)?;
    let samples: Vec<_> = dataset.samples.iter().collect();
    let eval = model.evaluate(&samples, 64)?;
    let scores: BTreeMap<String, f64> = metrics
        .iter()
        .map(|&k| (k.name().to_string(), eval.metric(k)))
        .collect();
    println!("{} samples, cross-entropy {:.4}", samples.len(), eval.loss);
    print_metrics(&scores);
    if let Some(path) = report {
        #[derive(Serialize)]
        struct EvalReport<'a> {
            n_samples: usize,
            loss: f64,
            #[serde(with = "crate::train::nan_json::map")]
            metrics: &'a BTreeMap<String, f64>,
        }
        let r = EvalReport {
            n_samples: samples.len(),
            loss: eval.loss,
            metrics: &scores,
        };
        write(path, &serde_json::to_string_pretty(&r)?)?;
    }
    Ok(EXIT_OK)
}

fn gradcheck(module: Option<&str>) -> Result<i32> {
    let start = Instant::now();
    let results = run_checks(module)?;
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} checks passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { EXIT_OK } else { EXIT_USAGE })
}

fn configure_threads() {
    if let Some(n) = std::env::var("TSFM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Pretrain {
            model,
            objective,
            run,
            seed,
            out,
        } => pretrain(model, objective, &run, seed, &out),
        Command::Finetune {
            model,
            init,
            head,
            run,
            seed,
            seeds,
            report,
            out,
        } => finetune(
            model,
            &init,
            head,
            &run,
            seed,
            seeds,
            &report,
            out.as_deref(),
        ),
        Command::Evaluate {
            ckpt,
            data,
            metrics,
            report,
        } => evaluate(&ckpt, &data, &metrics, report.as_deref()),
        Command::Gradcheck { module } => gradcheck(module.as_deref()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_USAGE
            }
        }
    }
}
