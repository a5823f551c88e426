//! `morl` — train, evaluate, and inspect specification-conditioned
//! multi-objective RL agents on gridworlds.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod artifacts;
mod eval;
mod rundir;
mod specgen;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable holding the default root for relative run
/// directories.
pub const RUN_ROOT_ENV: &str = "MORL_RUN_ROOT";

#[derive(Parser)]
#[command(name = "morl", version, about = "Logical-specification conditioned multi-objective RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a train/test specification set.
    Specgen {
        /// Number of environment objectives (1-6).
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        objectives: u8,
        /// Total number of distinct specifications to generate.
        #[arg(long)]
        count: usize,
        /// Fraction of specifications assigned to the training split.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        /// Maximum atomic predicates per specification.
        #[arg(long, default_value_t = 6)]
        max_atoms: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory for train.txt, test.txt, and manifest.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent according to a run configuration.
    Train {
        /// TOML run configuration; omitted keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory (created; resolved against $MORL_RUN_ROOT when relative).
        #[arg(long)]
        run_dir: PathBuf,
        /// Disable the length curriculum (sample from the full train set).
        #[arg(long)]
        no_curriculum: bool,
        /// Train the linear-scalarization variant (Dirichlet weight goals).
        #[arg(long)]
        linear: bool,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a list of specifications.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Spec-set file: one canonical specification per line.
        #[arg(long)]
        specs: PathBuf,
        /// Rollout episodes per specification.
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output table (tab-separated).
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit figure data from a checkpoint.
    Artifacts {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(subcommand)]
        mode: ArtifactMode,
    },
    /// Export a world's reward maps and layout as JSON.
    World {
        /// small, medium, or large.
        #[arg(long)]
        size: String,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        objectives: u8,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ArtifactMode {
    /// Greedy state-value heatmap for one specification, with the exact
    /// oracle value table and policy alongside.
    ValueHeatmap {
        #[arg(long, allow_hyphen_values = true)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmaps along the line between two specification encodings.
    Interpolate {
        #[arg(long, allow_hyphen_values = true)]
        spec: String,
        #[arg(long, allow_hyphen_values = true)]
        spec2: String,
        /// Number of interpolation points (endpoints included).
        #[arg(long, default_value_t = 7, value_parser = clap::value_parser!(u8).range(2..))]
        steps: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// 128-dim encodings for a spec list, with semantic bucket labels.
    Encodings {
        #[arg(long)]
        specs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error classified by exit code.
pub enum AppError {
    Usage(String),
    Data(anyhow::Error),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                AppError::Usage(msg) => eprintln!("usage error: {msg}"),
                AppError::Data(e) => eprintln!("error: {e:#}"),
                AppError::Numeric(msg) => eprintln!("numeric failure: {msg}"),
            }
            ExitCode::from(err.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Specgen { objectives, count, split, max_atoms, seed, out } => {
            specgen::run(objectives as usize, count, split, max_atoms, seed, &out)
        }
        Command::Train { config, run_dir, no_curriculum, linear, resume } => {
            train::run(config.as_deref(), &run_dir, no_curriculum, linear, resume)
        }
        Command::Eval { checkpoint, specs, episodes, seed, out } => {
            eval::run(&checkpoint, &specs, episodes, seed, &out)
        }
        Command::Artifacts { checkpoint, mode } => match mode {
            ArtifactMode::ValueHeatmap { spec, out } => {
                artifacts::value_heatmap(&checkpoint, &spec, &out)
            }
            ArtifactMode::Interpolate { spec, spec2, steps, out } => {
                artifacts::interpolate(&checkpoint, &spec, &spec2, steps as usize, &out)
            }
            ArtifactMode::Encodings { specs, out } => {
                artifacts::encodings(&checkpoint, &specs, &out)
            }
        },
        Command::World { size, objectives, seed, out } => {
            specgen::export_world(&size, objectives as usize, seed, &out)
        }
    }
}
