//! `battdiag` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use battdiag::pipeline::PipelineError;

#[derive(Debug, Parser)]
#[command(name = "battdiag", version, about = "Battery degradation diagnosis workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Experiment manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the manifest's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct WithBundle {
    #[command(flatten)]
    pub common: Common,
    /// Bundle directory written by `train` or `finetune`.
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Adds model estimates to the plot data.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictKneeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Regression model written by `knees-fit`.
    #[arg(long)]
    pub knee_model: PathBuf,
    /// Predicts for this single onset instead of every labeled cell.
    #[arg(long)]
    pub onset: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic fleet (telemetry, labels, manifest, planted truth).
    SynthGen(Common),
    /// Percentile bin bounds from the source cells.
    FeaturesBounds(Common),
    /// Feature matrices and feature spaces for every configured set.
    FeaturesExtract(Common),
    /// Knee, knee onset and per-RPT phase labels for every cell.
    KneesLabel(Common),
    /// Fits the linear onset-to-knee relation on kneed cells.
    KneesFit(Common),
    /// Source experiment and the deployable bundle.
    Train(Common),
    /// Target experiment over fine-tuning regimes and a fine-tuned bundle.
    Finetune(WithBundle),
    /// Metrics of a bundle on every scenario of the dataset.
    Evaluate(WithBundle),
    /// Noise and missing-feature perturbations on the target cells.
    Robustness(WithBundle),
    /// Knee predictions from onsets.
    PredictKnee(PredictKneeArgs),
    /// Tidy CSVs of capacity, modes and phases against time.
    ReportPlots(PlotArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Invalid(_) => "invalid_config",
            CliError::Io { .. } => "io",
            CliError::Runtime(_) => "runtime",
            CliError::Pipeline(e) => match e {
                PipelineError::InvalidConfig(_) => "invalid_config",
                PipelineError::InsufficientStratum { .. } => "insufficient_stratum",
                PipelineError::LengthMismatch { .. } | PipelineError::EmptyEvaluation => "metrics",
                PipelineError::InvalidLabel(_) => "invalid_label",
                PipelineError::MissingModes(_) | PipelineError::UnknownCell(_) => "data",
                PipelineError::FreezeViolation(_) => "freeze_violation",
                PipelineError::Bundle(_) => "bundle",
                PipelineError::Io { .. } => "io",
                PipelineError::Data(_) => "data",
                PipelineError::Feature(_) => "features",
                PipelineError::DeepHpm(_) => "deephpm",
                PipelineError::Gbt(_) => "gbt",
                PipelineError::Knee(_) => "knee",
            },
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Pipeline(PipelineError::InvalidConfig(_) | PipelineError::InsufficientStratum { .. }) => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error_code=usage");
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::SynthGen(c) => commands::synth_gen(&c),
        Command::FeaturesBounds(c) => commands::features_bounds(&c),
        Command::FeaturesExtract(c) => commands::features_extract(&c),
        Command::KneesLabel(c) => commands::knees_label(&c),
        Command::KneesFit(c) => commands::knees_fit(&c),
        Command::Train(c) => commands::train(&c),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Robustness(a) => commands::robustness(&a),
        Command::PredictKnee(a) => commands::predict_knee(&a),
        Command::ReportPlots(a) => commands::report_plots(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error_code={} {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
