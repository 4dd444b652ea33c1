//! `factorlens` command-line front end: dataset generation, training,
//! evaluation, intervention analysis and cross-run reports.
//!
//! Exit codes: 0 success, 1 I/O or other runtime failure, 2 configuration or
//! usage error, 3 numerical failure, 4 incompatible artifacts, 5 unsupported
//! operation for the framework.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use factorlens::{Error, Framework};

pub use config::ExperimentConfig;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("FACTORLENS_GIT_DESCRIBE"), ")");

#[derive(Debug, Parser)]
#[command(name = "factorlens", version = VERSION, about = "CCVAE and baseline experiments on connectivity matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort and write train/test splits.
    Gen(GenArgs),
    /// Train one framework on a generated dataset.
    Train(TrainArgs),
    /// Accuracy/SAP/MIG, confusion matrix and posterior cloud for a run.
    Eval(EvalArgs),
    /// Intervention effect maps for one label (or the configured scenarios).
    Intervene(IntervArgs),
    /// Mean and std of evaluated metrics per framework across runs.
    Report(ReportArgs),
    /// Print the fully resolved default configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; `train/` and `test/` are created inside.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_framework)]
    pub framework: Option<Framework>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// KL scale.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Inner draws for q(y|x) during training.
    #[arg(long)]
    pub k_train: Option<usize>,
    /// Inner draws for q(y|x) at evaluation.
    #[arg(long)]
    pub k_eval: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint label (`final`, `best`, `initial`, `epoch-0010`, ...).
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntervArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Target label (listening, schizophrenia, hallucinations). Without it the
    /// scenarios configured for the run are computed.
    #[arg(long)]
    pub label: Option<String>,
    /// Values of the other two labels, e.g. `listening=1,schizophrenia=1`.
    #[arg(long)]
    pub fixed: Option<String>,
    /// Number of sample pairs.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Output directory; defaults to `<run>/interventions/<label>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a heatmap PNG.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluated run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Resolve this file instead of the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_framework(s: &str) -> Result<Framework, String> {
    s.parse::<Framework>().map_err(|e| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    /// Another process holds the run directory.
    Locked(PathBuf),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Locked(p) => write!(f, "{} is locked by another writer (remove it if stale)", p.display()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Locked(_) => 1,
            CliError::Lib(e) => match e {
                Error::Config(_) | Error::Json(_) | Error::MalformedManifest { .. } => 2,
                Error::Numerical { .. } => 3,
                Error::Incompatible(_) | Error::ShapeMismatch { .. } | Error::Checksum { .. } => 4,
                Error::Unsupported { .. } => 5,
                _ => 1,
            },
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Intervene(a) => commands::intervene(&a),
        Command::Report(a) => commands::report(&a),
        Command::Config(a) => commands::print_config(&a),
    }
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
