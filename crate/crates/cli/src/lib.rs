//! Operator commands over the depth-bin library and network.
//!
//! Every command is a plain function returning a summary, so tests drive
//! them directly; `main` only parses flags and maps errors to exit codes.

pub mod commands;
pub mod figures;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use depthbins_net::NetError;

pub use commands::*;

/// User errors exit with 1, internal failures with 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::User(_) => 1,
            Self::Internal(_) => 2,
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Tensor(_) | NetError::NonFinite { .. } => Self::Internal(e.to_string()),
            other => Self::User(other.to_string()),
        }
    }
}

impl From<depthbins::Error> for CliError {
    fn from(e: depthbins::Error) -> Self {
        Self::User(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::User(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::User(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::User(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "depthbins", version, about = "Domain-aware metric depth bins at desk scale")]
pub struct Cli {
    /// Overrides the seed of the run configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the checkpoint and the per-epoch log.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint; epochs already done are skipped.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the mirror-averaged, same-FOV protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional run configuration; its architecture must match.
        #[arg(long)]
        config: Option<PathBuf>,
        /// On-disk dataset instead of the synthetic one.
        #[arg(long)]
        dataset_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Report (`report.json`) of a baseline run to compute mRI against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        baseline_name: Option<String>,
        /// Depth cap in meters; defaults to each sample's declared range.
        #[arg(long)]
        cap: Option<f64>,
        /// Only the first N samples of the split.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict metric depth for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        fx: Option<f64>,
        #[arg(long)]
        fy: Option<f64>,
        #[arg(long)]
        cx: Option<f64>,
        #[arg(long)]
        cy: Option<f64>,
        /// 16-bit depth PNG, millimeter units.
        #[arg(long)]
        out: PathBuf,
        /// Colorized preview PNG; defaults next to `out`.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Print the range-domain partition of a depth range.
    Partition {
        #[arg(long, default_value_t = 0.0)]
        z_min: f64,
        #[arg(long, default_value_t = 80.0)]
        z_max: f64,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value = "space_increasing")]
        strategy: String,
    },
    /// Emit figures and their CSV twins.
    Figures {
        /// Variation-based model.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Width-based model for the occupancy comparison.
        #[arg(long)]
        width_checkpoint: Option<PathBuf>,
        /// Output directory of `sweep-k`.
        #[arg(long)]
        sweep_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Frames in the per-frame RMSE sequence.
        #[arg(long, default_value_t = 96)]
        frames: usize,
        /// Test images used for the occupancy statistics.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train one model per K and tabulate held-out accuracy.
    SweepK {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2, 3, 4, 5, 6])]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs one parsed command, printing its summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config, out, resume } => {
            let s = cmd_train(&TrainArgs {
                config,
                out,
                resume,
                seed,
            })?;
            println!("{}", s.render());
        }
        Command::Eval {
            checkpoint,
            config,
            dataset_dir,
            split,
            baseline,
            baseline_name,
            cap,
            limit,
            out,
        } => {
            let s = cmd_eval(&EvalArgs {
                checkpoint,
                config,
                dataset_dir,
                split,
                baseline,
                baseline_name,
                cap,
                limit,
                out,
                seed,
            })?;
            print!("{}", s.render());
        }
        Command::Predict {
            checkpoint,
            image,
            fx,
            fy,
            cx,
            cy,
            out,
            preview,
        } => {
            let s = cmd_predict(&PredictArgs {
                checkpoint,
                image,
                fx,
                fy,
                cx,
                cy,
                out,
                preview,
            })?;
            print!("{}", s.render());
        }
        Command::Partition { z_min, z_max, k, strategy } => {
            print!("{}", cmd_partition(z_min, z_max, k, &strategy)?);
        }
        Command::Figures {
            checkpoint,
            width_checkpoint,
            sweep_dir,
            out,
            frames,
            limit,
        } => {
            let s = cmd_figures(&FiguresArgs {
                checkpoint,
                width_checkpoint,
                sweep_dir,
                out,
                frames,
                limit,
                seed,
            })?;
            for w in &s.warnings {
                log::warn!("{w}");
            }
            for p in &s.written {
                println!("wrote {}", p.display());
            }
        }
        Command::SweepK { config, ks, out } => {
            let s = cmd_sweep_k(&SweepArgs { config, ks, out, seed })?;
            print!("{}", s.render());
        }
    }
    Ok(())
}
