//! `greenhouse` command line: synthetic data, model fitting, expert
//! generation, training, evaluation, sweeps and attribution.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use greenhouse_core::config::RunConfig;
use greenhouse_core::{Error, Result};

pub use commands::run;

#[derive(Debug, Parser)]
#[command(name = "greenhouse", version, about = "Greenhouse ventilation control experiments")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Poly,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Strategy,
    Features,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate logged greenhouse data.
    GenData {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Clean raw data and fit normalization on the training days.
    Preprocess {
        /// Raw CSV; defaults to data/raw.csv in the run directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit a one-step dynamics model and report its error.
    FitEnv {
        #[arg(long, value_enum)]
        kind: ModelKind,
        /// Cleaned CSV; defaults to data/clean.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the MPC expert and store its days.
    GenExpert {
        /// Model used by the MPC; defaults to models/poly.json.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Learned environment; defaults to models/mlp.json.
        #[arg(long)]
        env_model: Option<PathBuf>,
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train a policy with the chosen coupling strategy.
    Train {
        /// dynamic, fixed, none, or e.g. dynamic-90 / fixed-50.
        #[arg(long)]
        strategy: Option<String>,
        /// Expert episodes; defaults to experts.json.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        env_model: Option<PathBuf>,
        /// Overrides ppo.total_steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score controllers or checkpoints on the reference simulator.
    Evaluate {
        /// Policy checkpoint; repeatable.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// pid, mpc, random or hold-N; repeatable.
        #[arg(long)]
        controller: Vec<String>,
        /// MPC model; defaults to models/poly.json.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Days per seed.
        #[arg(long)]
        days: Option<usize>,
    },
    /// Train one agent per strategy or feature group and seed.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        env_model: Option<PathBuf>,
        /// Cleaned CSV for feature fill values; defaults to data/clean.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Attribute daily scores to day-mean state features.
    Shap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        days: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Preprocess { .. } => "preprocess",
            Command::FitEnv { .. } => "fit-env",
            Command::GenExpert { .. } => "gen-expert",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Shap { .. } => "shap",
        }
    }
}

/// Effective configuration: file or defaults, then flag overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses, runs and maps the outcome to an exit code: 0 success, 1 user
/// error, 2 internal failure. Errors print one `error: <kind>: <message>`
/// line on stderr.
pub fn main_with_args(args: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return 1;
        }
    };
    std::panic::set_hook(Box::new(|_| {}));
    let outcome = std::panic::catch_unwind(|| -> Result<()> {
        let threads = cli.jobs.unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {threads} workers: {e}")))?;
        pool.install(|| run(&cli))
    });
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            if e.is_user_error() {
                1
            } else {
                2
            }
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            eprintln!("error: internal: panic: {}", one_line(&msg));
            2
        }
    }
}
