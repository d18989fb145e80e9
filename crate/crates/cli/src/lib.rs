//! Command-line experiments: synthetic data, bare TRM runs, training,
//! prediction, evaluation, an N_p sweep and parameter-count inspection.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "trmnet",
    version,
    about = "Traffic flux prediction with a neural-network-driven reaction model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed; overrides `training.seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic measurement CSV and its ground-truth sidecar.
    Synth(Common),
    /// Run the TRM alone, from `[simulate]` or by replaying a ground-truth file.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Train the network; writes checkpoints and the epoch history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the last checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write smoothed and predicted fluxes, rates and densities for the test windows.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Parameter file; defaults to the best parameters in the output directory.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Write the evaluation report and tables for the test windows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train and evaluate once per `gridsearch.n_past` value.
    GridsearchNp(Common),
    /// Print per-block parameter counts.
    InspectParams(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    let out = commands::output_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, out) = load(&c)?;
            commands::synth(&cfg, &out)
        }
        Command::Simulate { common, ground_truth } => {
            let (cfg, out) = load(&common)?;
            commands::simulate(&cfg, ground_truth.as_deref(), &out)
        }
        Command::Train { common, resume } => {
            let (cfg, out) = load(&common)?;
            commands::train(&cfg, &out, resume).map(|_| ())
        }
        Command::Predict { common, params } => {
            let (cfg, out) = load(&common)?;
            commands::predict(&cfg, params.as_deref(), &out)
        }
        Command::Evaluate { common, params } => {
            let (cfg, out) = load(&common)?;
            commands::evaluate_cmd(&cfg, params.as_deref(), &out).map(|_| ())
        }
        Command::GridsearchNp(c) => {
            let (cfg, out) = load(&c)?;
            commands::gridsearch_np(&cfg, &out).map(|_| ())
        }
        Command::InspectParams(c) => {
            let (cfg, _) = load(&c)?;
            let (_, table) = commands::inspect_params(&cfg)?;
            print!("{table}");
            Ok(())
        }
    }
}

/// 2 for configuration errors, 3 for data errors, 4 for numerical failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<trmnet::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn core_code(e: &trmnet::Error) -> u8 {
    use trmnet::Error::*;
    match e {
        Config(_) | Dimension { .. } => 2,
        Data(_) | Parse { .. } | Io(_) => 3,
        Domain { .. } | Cfl { .. } | Numerical(_) => 4,
        AtStep { source, .. } => core_code(source),
    }
}
