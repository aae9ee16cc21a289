//! `iomdp`: validate models, solve the truncated constrained program,
//! simulate and analyze the resulting policy, and reproduce the wireless
//! policy tables.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iomdp::belief::BoundaryMode;

#[derive(Debug, Parser)]
#[command(
    name = "iomdp",
    version,
    about = "Constrained MDPs with intermittent state observation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file: shapes, stochastic rows, recurrence.
    Validate {
        model: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Build the belief space, solve the occupancy program and write artifacts.
    Solve {
        model: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Simulate the policy stored in an output directory written by `solve`.
    Simulate {
        #[command(flatten)]
        opts: RunOpts,
        /// Also write a per-step trace of the first replication.
        #[arg(long)]
        trace: bool,
    },
    /// Chain structure, drift, duality gaps and occupancy checks for a model.
    Analyze {
        model: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Sweep the built-in wireless instance and compare with the published tables.
    Reproduce {
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Debug, Clone, Args)]
struct RunOpts {
    /// Override the model's observation probability.
    #[arg(long)]
    rho: Option<f64>,
    /// Truncation depth (largest age kept).
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    /// What happens to mass leaving the truncated space.
    #[arg(long, default_value = "drop")]
    mode: BoundaryMode,
    /// Enforce the average-cost budget.
    #[arg(long)]
    constrained: bool,
    /// Override the model's budget.
    #[arg(long = "B")]
    budget: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    #[arg(long = "reps", default_value_t = 10)]
    replications: usize,
    /// Output directory.
    #[arg(long = "out", default_value = "out")]
    output_dir: PathBuf,
}

/// Everything a command needs, checked before dispatch.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model_path: Option<PathBuf>,
    pub rho: Option<f64>,
    pub k: usize,
    pub mode: BoundaryMode,
    pub constrained: bool,
    pub budget: Option<f64>,
    pub seed: u64,
    pub horizon: u64,
    pub replications: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    fn new(model_path: Option<PathBuf>, opts: RunOpts) -> anyhow::Result<Self> {
        if let Some(rho) = opts.rho {
            anyhow::ensure!(
                rho > 0.0 && rho <= 1.0,
                "--rho must lie in (0, 1], got {rho}"
            );
        }
        if let Some(b) = opts.budget {
            anyhow::ensure!(!b.is_nan(), "--B must be a number");
        }
        anyhow::ensure!(opts.replications >= 1, "--reps must be at least 1");
        anyhow::ensure!(opts.horizon >= 10, "--horizon must be at least 10");
        if let Some(path) = &model_path {
            anyhow::ensure!(
                path.is_file(),
                "model file {} is not readable",
                path.display()
            );
        }
        Ok(RunConfig {
            model_path,
            rho: opts.rho,
            k: opts.k,
            mode: opts.mode,
            constrained: opts.constrained,
            budget: opts.budget,
            seed: opts.seed,
            horizon: opts.horizon,
            replications: opts.replications,
            output_dir: opts.output_dir,
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IOMDP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { model, opts } => {
            RunConfig::new(Some(model), opts).and_then(|c| commands::validate(&c))
        }
        Command::Solve { model, opts } => {
            RunConfig::new(Some(model), opts).and_then(|c| commands::solve(&c))
        }
        Command::Simulate { opts, trace } => {
            RunConfig::new(None, opts).and_then(|c| commands::simulate(&c, trace))
        }
        Command::Analyze { model, opts } => {
            RunConfig::new(Some(model), opts).and_then(|c| commands::analyze(&c))
        }
        Command::Reproduce { opts } => {
            RunConfig::new(None, opts).and_then(|c| commands::reproduce(&c))
        }
    };
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
