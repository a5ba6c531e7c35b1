//! Experiment orchestration: cross-validation splits, metrics, structure
//! search, source and target experiments, robustness perturbations and
//! model bundles.

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::deephpm::DeepHpmError;
use crate::features::FeatureError;
use crate::gbt::GbtError;
use crate::knee::KneeError;

mod bundle;
mod config;
mod experiment;
mod metrics;
mod robustness;
mod search;
mod splits;

pub use bundle::{
    model_file, Bundle, BundleMeta, BUNDLE_FILE, BUNDLE_SCHEMA_VERSION, FEATURES_FILE, GBT_FILE, GBT_INPUTS,
};
pub use config::{
    DatasetSection, DeepHpmSection, ExperimentManifest, FeaturesSection, KneeSection, RobustnessSection, SplitsSection,
    SynthSection, TargetSection, EXPERIMENT_SCHEMA_VERSION,
};
pub use experiment::{
    deploy_fine_tuned, evaluate_bundle, label_cell, prepare, run_source_experiment, run_target_experiment,
    FineTuneRecord, Prepared, SourceOutcome, TargetOutcome,
};
pub use metrics::{
    compute_metrics, phase_metrics, rmse, write_metrics_csv, MetricsReport, PhaseMetrics, RepeatMetrics,
};
pub use robustness::{add_feature_noise, robustness_suite, zero_extremes, RobustnessCase, RobustnessOutcome};
pub use search::{search_structures, Sampler, SearchOutcome, SearchSpace, Trial};
pub use splits::{make_splits, BalanceCriterion, Regime, SplitPlan, SplitRepeat, DEFAULT_REPEATS};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stratum {stratum}: need at least {need} cells, got {got}")]
    InsufficientStratum { stratum: String, got: usize, need: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("phase label {0} not in 1..=3")]
    InvalidLabel(u8),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("cell {0} has no degradation-mode labels")]
    MissingModes(String),
    #[error("cell {0} not found")]
    UnknownCell(String),
    #[error("fine-tuning changed the dynamics network of the {0} model")]
    FreezeViolation(String),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    DeepHpm(#[from] DeepHpmError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Knee(#[from] KneeError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `f` on a thread pool of `jobs` workers (0 = all cores).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
