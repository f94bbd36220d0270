//! Batch experiment CLI for the separable-POMDP inventory solver.
//!
//! Every subcommand is a pure function of (config file, master seed):
//! reruns produce byte-identical outputs. `--seed` overrides the config's
//! seed; `SEP_POMDP_THREADS` caps the worker pool (0 or unset = automatic).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit code 2: invalid configuration or arguments.
/// Exit code 3: I/O failure.
/// Exit code 4: numerical non-convergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io { path: String, source: std::io::Error },
    NonConverged(String),
}

impl CliError {
    fn io(path: String, source: std::io::Error) -> Self {
        CliError::Io { path, source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::NonConverged(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Io { path, source } => write!(f, "I/O error on {path}: {source}"),
            CliError::NonConverged(msg) => write!(f, "failed to converge: {msg}"),
        }
    }
}

impl From<sep_pomdp_core::Error> for CliError {
    fn from(e: sep_pomdp_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "sep-pomdp",
    about = "Separable-POMDP inventory experiments: data generation, HMM training, \
             SVM base-stock policies, Monte Carlo evaluation, and lower bounds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override; defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectory datasets, one CSV per configured dataset size.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Fit an HMM to a dataset by EM with restarts; keep the best fit.
    TrainHmm {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV (`traj_id,t,y,x`).
        #[arg(long)]
        data: PathBuf,
        /// Output model path; defaults to `<output_dir>/hmm_trained.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the SVM base-stock policy: belief grid, Monte Carlo labels,
    /// one classifier per configured C, and a partition mesh CSV.
    BuildPolicy {
        #[command(flatten)]
        common: Common,
        /// Demand model to build from; defaults to the config's true model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a classifier by Monte Carlo simulation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Classifier JSON produced by build-policy.
        #[arg(long)]
        classifier: PathBuf,
        /// Model the filter runs on; defaults to the config's true model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the full optimality-gap experiment across dataset sizes.
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Information-relaxation lower bounds paired with policy upper bounds.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Demand model; defaults to the config's true model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn configure_threads() {
    let Ok(raw) = std::env::var("SEP_POMDP_THREADS") else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(0) | Err(_) => {}
        Ok(n) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common.config, common.seed),
        Command::TrainHmm { common, data, out } => {
            commands::train_hmm(&common.config, common.seed, &data, out.as_deref())
        }
        Command::BuildPolicy { common, model } => {
            commands::build_policy(&common.config, common.seed, model.as_deref())
        }
        Command::Evaluate { common, classifier, model } => {
            commands::evaluate(&common.config, common.seed, &classifier, model.as_deref())
        }
        Command::Experiment { common } => commands::experiment(&common.config, common.seed),
        Command::Bound { common, model } => {
            commands::bound(&common.config, common.seed, model.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
