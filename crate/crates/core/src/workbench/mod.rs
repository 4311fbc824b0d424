//! On-disk formats, synthetic data, subject-wise splits, the gradient-check
//! registry and the command-line interface.

mod checkpoint;
mod cli;
mod config;
mod dataset;
mod gradcheck;
mod split;
mod synth;

pub use checkpoint::{
    config_hash, Checkpoint, ClassifierShape, Provenance, TensorEntry, MAGIC, VERSION,
};
pub use cli::{run, summarize, SeedSummary, EXIT_DATA, EXIT_OK, EXIT_TIME_LIMIT, EXIT_USAGE};
pub use config::{RunConfig, SplitConfig};
pub use dataset::{
    Dataset, DatasetManifest, DATA_FILE, FORMAT_VERSION, LABELS_FILE, MANIFEST_FILE,
};
pub use gradcheck::{module_names, registry, run_checks, CheckResult, GradCheck, SEEDS, TOLERANCE};
pub use split::{split_by_subject, split_by_subject_ranges, split_counts, subject_number, Splits};
pub use synth::{gen_synthetic, Band, ClassSignature, SynthSpec};
