//! Command-line front end for the ambiguity-aware weighting toolkit.
//!
//! Each subcommand is a thin wrapper over the core library. Exit codes:
//! 0 success, 1 usage, 2 config, 3 data, 4 numerical failure.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use ambiweight::data::DataError;
use ambiweight::eval::EvalError;
use ambiweight::models::ModelError;

pub use config::{RunConfig, Settings, Source};

pub const LOG_ENV: &str = "AMBIWEIGHT_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig { .. } | DataError::Split(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::ChannelMismatch { .. } | ModelError::InputTooSmall { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) | EvalError::Weighting(_) | EvalError::HeadMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            EvalError::NonFiniteLoss { .. } | EvalError::NonFiniteScore { .. } => CliError::Numerical(e.to_string()),
            EvalError::Data(d) => d.into(),
            EvalError::Model(m) => m.into(),
            EvalError::Tensor(ambiweight::tensor::TensorError::Invalid(m)) => CliError::Config(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "ambiweight",
    version,
    about = "Ambiguity-aware weighting for negated-label classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image dataset with a label manifest.
    Synth(SynthArgs),
    /// Label free-text reports into a manifest.
    Label(LabelArgs),
    /// Train one model and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Run the weight-modifier sweep against the baseline.
    Sweep(SweepArgs),
    /// Evaluate a saved model on a manifest.
    Eval(EvalArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Render charts and a summary from a sweep report CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two cued negated pairs for the modifier experiment.
    Desk,
    /// Three findings with calibrated no-mention rates.
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    DbNet,
    SimpleCnn,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Used when the config has no `synth` section.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Write report text and re-derive states with the labeler.
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// JSON-lines file with `report_id` and `body` per line.
    #[arg(long)]
    pub reports: PathBuf,
    /// Vocabulary file; defaults to the built-in chest X-ray vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Negation trigger list, one trigger per line.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub max_scope: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by `train` and `sweep`.
#[derive(Debug, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory holding `manifest.csv`, or a manifest path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Drop contradictory manifest rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Disable augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    /// Enable weight modifiers with this mean.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Train without class weights.
    #[arg(long, conflicts_with = "mu")]
    pub unweighted: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: TrainingArgs,
    /// Comma-separated μ values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Number of seeds per arm.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Add an arm without class weights.
    #[arg(long)]
    pub unweighted: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Also write the table to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Parameter coordinates sampled for the whole-network check.
    #[arg(long, default_value_t = 200)]
    pub coords: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Output directory; defaults to the CSV's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one parsed command, writing results to `out` and the resolved
/// settings to `err`.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a, out, err),
        Command::Label(a) => commands::label(&a, out),
        Command::Train(a) => commands::train(&a, out, err),
        Command::Sweep(a) => commands::sweep(&a, out, err),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Gradcheck(a) => commands::gradcheck(&a, out),
        Command::Report(a) => commands::report(&a, out),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
