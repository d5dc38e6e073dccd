mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forge_cl::strategies::StrategyKind;

use crate::config::{RunConfig, Scale};
use crate::error::Result;

#[derive(Parser)]
#[command(name = "forge-cl", version, about = "Continual-learning benchmarks on synthetic press data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file with [experiment], [model], [strategy], [train], [press]
    /// and [permuted] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Preset the config file is layered over.
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    sequences: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset catalog and write one file per task.
    GenData(Common),
    /// Train one strategy on one sequence.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind, default_value = "none")]
        strategy: StrategyKind,
    },
    /// Run every configured strategy on random sequences and summarize.
    Campaign {
        #[command(flatten)]
        common: Common,
        /// Restrict to these strategies (repeatable).
        #[arg(long, value_parser = parse_kind)]
        strategy: Vec<StrategyKind>,
    },
    /// Finite-difference check of the loss and regularizer gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Rebuild tables and plots from a finished campaign directory.
    Report(Common),
}

fn parse_kind(s: &str) -> std::result::Result<StrategyKind, String> {
    s.parse().map_err(|e: forge_cl::Error| e.to_string())
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref(), common.scale)?;
    if let Some(seed) = common.seed {
        config.experiment.seed = seed;
    }
    if let Some(n) = common.seq_len {
        config.experiment.seq_len = n;
    }
    if let Some(n) = common.sequences {
        config.experiment.n_sequences = n;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(common) => commands::gen_data(&resolve(&common)?, &common.out),
        Command::Run { common, strategy } => commands::run(&resolve(&common)?, strategy, &common.out),
        Command::Campaign { common, strategy } => {
            let mut config = resolve(&common)?;
            if !strategy.is_empty() {
                config.experiment.strategies = strategy;
            }
            commands::campaign(&config, &common.out)
        }
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => {
            let config = match common.config {
                Some(_) => Some(resolve(&common)?),
                None => None,
            };
            commands::gradcheck(config.as_ref(), common.seed.unwrap_or(0), corrupt_gradient)
        }
        Command::Report(common) => commands::report(&common.out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
