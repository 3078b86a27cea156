//! The `utvae` command line: generate synthetic data, train a model
//! under one of the four objectives, re-evaluate a checkpoint, run an
//! experiment sweep, or compute inverse-probability-weighted baselines.
//!
//! Every subcommand reads the same layered configuration: built-in
//! defaults, then an optional `--config` file of `[section]` headers
//! and `key=value` lines, then command-line flags, with later layers
//! winning. Exit code 1 marks a validation problem (bad flags, bad
//! config, missing inputs); 2 marks a failure during execution.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod runner;
mod sweep;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Args, Debug)]
pub struct CommonOpts {
    /// Configuration file of [section] headers and key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Directory for outputs (falls back to out.dir, then $UTVAE_OUT_DIR, then ./runs).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataOpts {
    /// Data source: "synthetic", "ihdp:<dir>", or a path to a generated CSV.
    #[arg(long)]
    pub dataset: Option<String>,

    /// Training rows for synthetic data (or a truncation count for CSV data).
    #[arg(long)]
    pub n: Option<usize>,

    /// Treatment-assignment balance for synthetic data, in [0.5, 1).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// IHDP replicate number.
    #[arg(long)]
    pub replicate: Option<usize>,

    /// Covariate noise form for synthetic data: "mixture" or "literal".
    #[arg(long)]
    pub variance_form: Option<String>,

    /// Validation rows held out next to the training set.
    #[arg(long)]
    pub n_val: Option<usize>,

    /// Test rows held out next to the training set.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainOpts {
    /// Objective: cevae, utvae, utvae_inf, or utvae_gen.
    #[arg(long)]
    pub objective: Option<String>,

    /// Propensity-ball radius for the uniform-treatment weights.
    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch: Option<usize>,

    #[arg(long)]
    pub latent_dim: Option<usize>,

    #[arg(long)]
    pub hidden_layers: Option<usize>,

    #[arg(long)]
    pub hidden_units: Option<usize>,

    /// Monte Carlo samples per row for the counterfactual query.
    #[arg(long)]
    pub mc_samples: Option<usize>,

    /// Monte Carlo samples per row inside the training bound.
    #[arg(long)]
    pub elbo_samples: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    #[command(flatten)]
    pub data: DataOpts,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    #[command(flatten)]
    pub data: DataOpts,

    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    #[command(flatten)]
    pub data: DataOpts,

    /// Checkpoint written by a previous train run.
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub mc_samples: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct IpwArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    #[command(flatten)]
    pub data: DataOpts,

    /// Ball radius for the nearest-neighbour propensity estimate.
    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonOpts,

    #[command(flatten)]
    pub data: DataOpts,

    #[command(flatten)]
    pub train: TrainOpts,

    /// Comma-separated objectives, e.g. "cevae,utvae".
    #[arg(long)]
    pub objectives: Option<String>,

    /// Comma-separated epsilon grid for the weighted objectives.
    #[arg(long)]
    pub epsilons: Option<String>,

    /// Comma-separated alpha axis (synthetic data only).
    #[arg(long)]
    pub alphas: Option<String>,

    /// Comma-separated training-size axis (synthetic data only).
    #[arg(long)]
    pub ns: Option<String>,

    /// Comma-separated IHDP replicate axis.
    #[arg(long)]
    pub replicates: Option<String>,

    /// Number of seeds per cell; seed values run 0..count.
    #[arg(long)]
    pub seeds: Option<usize>,

    /// Worker threads for the cell pool (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Parser, Debug)]
#[command(name = "utvae", version, about = "Train and evaluate causal-effect VAEs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset CSV with a manifest.
    Gen(GenArgs),
    /// Train one model and record its metrics.
    Train(TrainArgs),
    /// Re-evaluate a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a grid of training cells in parallel and aggregate.
    Sweep(SweepArgs),
    /// Inverse-probability-weighted ATE baselines.
    Ipw(IpwArgs),
}

fn dispatch(cmd: &Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Gen(args) => runner::cmd_gen(args),
        Cmd::Train(args) => runner::cmd_train(args),
        Cmd::Eval(args) => runner::cmd_eval(args),
        Cmd::Sweep(args) => sweep::cmd_sweep(args),
        Cmd::Ipw(args) => runner::cmd_ipw(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
