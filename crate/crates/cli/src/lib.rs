//! The `dispad` command line: simulate, rank, train, transfer, predict and
//! evaluate, with every artifact tagged by the hash of the configuration
//! that produced it.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration. Exit code 1.
    Usage(String),
    /// Missing, malformed or mismatched inputs. Exit code 2.
    Data(String),
    /// Non-finite values or divergence. Exit code 3.
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<dispad_core::Error> for Failure {
    fn from(e: dispad_core::Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dispad", version, about = "Displacement-robust elbow angle estimation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use only the first N channels.
    #[arg(long, global = true)]
    pub sensors: Option<usize>,
    /// Accept inputs whose config hash differs from the current one.
    #[arg(long, global = true)]
    pub force: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic data.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Write the per-session channel ranking.
    Rank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a model to one unlabelled recording.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        /// Labelled source dataset.
        #[arg(long)]
        source: PathBuf,
        /// Unlabelled target session (CSV).
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame angle estimates for one session.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply the Kalman smoother.
        #[arg(long)]
        smooth: bool,
    },
    /// Error report on a labelled dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// "test" (placements held out at training time) or "all".
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        smooth: bool,
        /// Write the summary as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Simulate a placement grid (or a single placement).
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Grid steps as ETA_CM,BETA_DEG.
        #[arg(long)]
        grid: Option<String>,
        /// Simulate only this placement, ETA_CM,BETA_DEG.
        #[arg(long, allow_hyphen_values = true)]
        placement: Option<String>,
        /// Session length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.global.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.global.sensors {
        cfg.preprocess.sensors = n;
    }
    let ctx = commands::Context { cfg, force: cli.global.force };
    match cli.command {
        Command::Sim(SimCommand::Gen { out, grid, placement, duration }) => {
            commands::sim_gen(ctx, &out, grid.as_deref(), placement.as_deref(), duration)
        }
        Command::Rank { data, out } => commands::rank(&ctx, &data, &out),
        Command::Train { data, out } => commands::train(&ctx, &data, &out),
        Command::Transfer { model, source, target, out } => commands::transfer(&ctx, &model, &source, &target, &out),
        Command::Predict { model, input, out, smooth } => commands::predict(&ctx, &model, &input, &out, smooth),
        Command::Evaluate { model, data, out, split, smooth, json } => {
            commands::evaluate(&ctx, &model, &data, &out, &split, smooth, json)
        }
    }
}
