//! The `fedgen` command line: synthesize, partition, split, train, evaluate
//! and score entropy, one stage at a time or as a single pipeline.

mod config;
mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{
    parse_config, parse_config_str, DatasetSource, EntropySection, ExperimentConfig, Outputs,
    PartitionConfig, TrainerConfig,
};
pub use stages::{
    entropy, evaluate, load_params, load_split, partition_dataset, pipeline, save_params,
    save_split, source_dataset, split_dataset, train,
};

use crate::datasets::{load_federated, save_federated};
use crate::entropy::write_entropy_csv;
use crate::error::Result;
use crate::metrics::write_metrics_csv;
use crate::parallel;

pub const THREADS_ENV: &str = "FEDGEN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "fedgen",
    version,
    about = "Federated learning generalization simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-partition a dataset with the configured partitioner.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into participating train/validation and
    /// unparticipating blocks, written as three files in a directory.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a split directory and write per-round metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Evaluate saved parameters on a split directory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate per-client entropy of a dataset.
    Entropy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out } => {
            let cfg = parse_config(config)?;
            save_federated(&source_dataset(&cfg)?, out)
        }
        Command::Partition { config, data, out } => {
            let cfg = parse_config(config)?;
            save_federated(&partition_dataset(&cfg, load_federated(data)?)?, out)
        }
        Command::Split { config, data, out } => {
            let cfg = parse_config(config)?;
            save_split(&split_dataset(&cfg, &load_federated(data)?)?, &out)
        }
        Command::Train {
            config,
            split,
            metrics,
            params,
        } => {
            let cfg = parse_config(config)?;
            let (log, p) = train(&cfg, &load_split(&split)?)?;
            write_metrics_csv(&log, metrics)?;
            match params {
                Some(path) => save_params(&p, &path),
                None => Ok(()),
            }
        }
        Command::Eval {
            config,
            split,
            params,
            out,
        } => {
            let cfg = parse_config(config)?;
            let log = evaluate(&cfg, &load_split(&split)?, &load_params(&params)?)?;
            write_metrics_csv(&log, out)
        }
        Command::Entropy { config, data, out } => {
            let cfg = parse_config(config)?;
            write_entropy_csv(&entropy(&cfg, &load_federated(data)?)?, out)
        }
        Command::Pipeline { config } => pipeline(&parse_config(config)?),
    }
}

fn configure_threads() {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => parallel::init_threads(n),
            Err(_) => log::warn!("ignoring {THREADS_ENV}={v:?}: not a number"),
        },
        Err(_) => parallel::init_threads(0),
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on runtime errors, 2 on usage errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
