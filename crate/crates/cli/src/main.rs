//! `vigil` — reproducible pipelines for the continuous-authentication
//! engine: synthetic dataset generation, per-experiment training and
//! characterization with persisted model artifacts, the full evaluation
//! rotation, and report summarization.
//!
//! Every flag can also be set through a `VIGIL_*` environment variable.
//! Exit codes: 0 success, 1 systemic failure, 2 bad configuration.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "vigil", version, about = "Continuous behavioral authentication pipelines")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "VIGIL_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic population and write its event log.
    Generate(GenerateArgs),
    /// Train per-user models for one experiment of the fold rotation.
    Train(TrainArgs),
    /// Estimate per-detector error rates (and tune the text threshold) on
    /// the characterization fold of one experiment.
    Characterize(CharacterizeArgs),
    /// Run the full 5-experiment rotation end to end and write all report
    /// tables plus decision traces.
    Evaluate(EvaluateArgs),
    /// Summarize a previously written evaluation directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Number of synthetic users (at least 2).
    #[arg(long, env = "VIGIL_USERS")]
    users: usize,
    /// Target active (idle-compressed) hours per user.
    #[arg(long, env = "VIGIL_HOURS")]
    hours: f64,
    #[arg(long, env = "VIGIL_SEED")]
    seed: u64,
    /// Behavioral overlap degree in [0, 1]: 0 disjoint users, 1 identical.
    #[arg(long, default_value_t = 0.0, env = "VIGIL_OVERLAP")]
    overlap: f64,
    /// Per-user relative rate spread.
    #[arg(long, default_value_t = 0.10, env = "VIGIL_RATE_DISPERSION")]
    rate_dispersion: f64,
    /// Output directory (created if missing).
    #[arg(long, env = "VIGIL_OUT")]
    out: std::path::PathBuf,
}

/// Classifier and timeline knobs shared by train/characterize/evaluate.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Character n-gram length for the text verifier.
    #[arg(long, default_value_t = 4, env = "VIGIL_NGRAM_N")]
    ngram_n: usize,
    /// Entity-model size (top K entities).
    #[arg(long, default_value_t = 20, env = "VIGIL_TOP_K")]
    top_k: usize,
    /// Smoothing floor for entity probabilities.
    #[arg(long, default_value_t = 1e-6, env = "VIGIL_EPSILON")]
    epsilon: f64,
    /// SVM box constraint.
    #[arg(long, default_value_t = 1.0, env = "VIGIL_SVM_C")]
    svm_c: f64,
    /// RBF width override (default: derived from pairwise distances).
    #[arg(long, env = "VIGIL_SVM_GAMMA")]
    svm_gamma: Option<f64>,
    /// Idle gap threshold in seconds.
    #[arg(long, default_value_t = 300, env = "VIGIL_IDLE_THRESHOLD_SECS")]
    idle_threshold_secs: i64,
    /// Compressed value of an idle gap in seconds.
    #[arg(long, default_value_t = 300, env = "VIGIL_IDLE_CAP_SECS")]
    idle_cap_secs: i64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Event-log file.
    #[arg(long, env = "VIGIL_DATASET")]
    dataset: std::path::PathBuf,
    /// Experiment of the rotation, 1 through 5.
    #[arg(long, default_value_t = 1, env = "VIGIL_EXPERIMENT")]
    experiment: usize,
    #[arg(long, env = "VIGIL_OUT")]
    out: std::path::PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct CharacterizeArgs {
    #[arg(long, env = "VIGIL_DATASET")]
    dataset: std::path::PathBuf,
    /// Directory of model files written by `train`.
    #[arg(long, env = "VIGIL_MODELS")]
    models: std::path::PathBuf,
    #[arg(long, default_value_t = 1, env = "VIGIL_EXPERIMENT")]
    experiment: usize,
    /// Decision window length in seconds.
    #[arg(long, env = "VIGIL_OMEGA_SECS")]
    omega_secs: i64,
    #[arg(long, env = "VIGIL_OUT")]
    out: std::path::PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, env = "VIGIL_DATASET")]
    dataset: std::path::PathBuf,
    #[arg(long, env = "VIGIL_OUT")]
    out: std::path::PathBuf,
    /// Comma-separated decision window sizes in seconds.
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = vigil_core::evaluation::DEFAULT_WINDOW_SIZES_SECS,
        env = "VIGIL_WINDOW_SIZES"
    )]
    window_sizes: Vec<i64>,
    /// Operating points in the threshold sweep.
    #[arg(long, default_value_t = 201, env = "VIGIL_TAU_STEPS")]
    tau_steps: usize,
    /// Sweep endpoint override (sweep covers [-limit, +limit]).
    #[arg(long, env = "VIGIL_TAU_LIMIT")]
    tau_limit: Option<f64>,
    /// Skip writing per-window decision traces.
    #[arg(long, env = "VIGIL_NO_TRACES")]
    no_traces: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// An output directory written by `evaluate`.
    #[arg(long, env = "VIGIL_FROM")]
    from: std::path::PathBuf,
}

/// Configuration mistakes exit 2; runtime failures exit 1.
#[derive(Debug)]
enum CliError {
    Config(String),
    Failure(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Failure(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Failure(err.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: failed to size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Train(args) => commands::train(args),
        Command::Characterize(args) => commands::characterize(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
