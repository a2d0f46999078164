//! `exituq` — multi-exit GNN training, self-distillation, and uncertainty
//! quantification from a flat key=value config.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 training
//! divergence, 1 any other failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use exituq_cli::commands::{
    cmd_ood, cmd_prepare_data, cmd_report, cmd_train, cmd_uncertainty, UncertaintySource,
    WeightChoice,
};
use exituq_cli::config::RunConfig;
use exituq_cli::CliError;

#[derive(Parser)]
#[command(
    name = "exituq",
    version,
    about = "Multi-exit GNN self-distillation and uncertainty quantification",
    after_help = "Config file: flat `key = value` lines; see the crate README for the key list.\n\
                  Env: DISTILL_UQ_DATA is the default root for relative tu: dataset paths."
)]
struct Cli {
    /// Run configuration file (flat key=value; defaults apply when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config's global seed
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or normalize the configured dataset into TU-format files
    PrepareData,
    /// Cross-validated training of the configured method
    Train {
        /// Override the config's method (single|ensemble|mcdropout|selfdistill)
        #[arg(long, value_name = "METHOD")]
        method: Option<String>,
        /// Override the config's ensemble size
        #[arg(long, value_name = "N")]
        ensemble_size: Option<usize>,
        /// Train up to N folds concurrently (zeroes the timing columns)
        #[arg(long, value_name = "N")]
        parallel_folds: Option<usize>,
    },
    /// Score per-sample uncertainty from a checkpoint or raw probabilities
    Uncertainty {
        /// Multi-exit model checkpoint to score over the configured dataset
        #[arg(long, value_name = "PATH", conflicts_with = "samples")]
        checkpoint: Option<PathBuf>,
        /// Raw per-exit probability JSON ({"m": …, "samples": […]})
        #[arg(long, value_name = "PATH")]
        samples: Option<PathBuf>,
        /// Which exit-weighting columns to report
        #[arg(long, value_name = "KIND", default_value = "both")]
        weights: String,
    },
    /// Hold out a class, train, and compare ID vs OOD predictive entropy
    Ood {
        /// Reuse the models a previous ood run saved in this directory
        #[arg(long, value_name = "DIR")]
        load: Option<PathBuf>,
    },
    /// Aggregate fold metrics in a directory into report.json / report.txt
    Report {
        /// Directory holding metrics.csv files (default: the output dir)
        dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }

    match cli.command {
        Command::PrepareData => cmd_prepare_data(&cfg),
        Command::Train { method, ensemble_size, parallel_folds } => {
            if let Some(m) = method {
                cfg.method = m.parse().map_err(CliError::Usage)?;
            }
            if let Some(n) = ensemble_size {
                cfg.ensemble_size = n;
            }
            cfg.validate()?;
            cmd_train(&cfg, parallel_folds.unwrap_or(1))
        }
        Command::Uncertainty { checkpoint, samples, weights } => {
            let weights: WeightChoice = weights.parse().map_err(CliError::Usage)?;
            let source = match (checkpoint, samples) {
                (Some(path), None) => UncertaintySource::Checkpoint(path),
                (None, Some(path)) => UncertaintySource::Samples(path),
                _ => {
                    return Err(CliError::Usage(
                        "pass exactly one of --checkpoint <file> or --samples <file>".into(),
                    ))
                }
            };
            cmd_uncertainty(&cfg, &source, weights)
        }
        Command::Ood { load } => cmd_ood(&cfg, load.as_deref()),
        Command::Report { dir } => {
            let target = dir.unwrap_or_else(|| cfg.out.clone());
            cmd_report(&target)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
