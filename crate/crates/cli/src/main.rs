//! `magent`: run, simulate, evaluate, ablate and inspect retrieval runs.

mod commands;
mod io;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, Outcome};
use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "magent", version, about = "Adaptive explore/exploit retrieval with agent loops")]
struct Cli {
    /// TOML config; any flag given on the command line wins.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the loop over a topics file and a corpus.
    Run(Settings),
    /// Generate a synthetic world and run one policy over it.
    Simulate(Settings),
    /// Score run files against qrels and compare them.
    Evaluate {
        #[command(flatten)]
        settings: Settings,
        /// Report inferred AP instead of exact AP.
        #[arg(long)]
        inferred: bool,
        /// Sampling rate per stratum for inferred AP, `stratum=rate`.
        #[arg(long = "rate")]
        rates: Vec<String>,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Ablation arms and the (T, k) sensitivity grid over simulated worlds.
    Ablate(Settings),
    /// Print a trace as a per-iteration narrative.
    Trace {
        file: PathBuf,
        /// Only this iteration.
        #[arg(long)]
        iteration: Option<usize>,
    },
}

fn settings(config: Option<&PathBuf>, flags: &Settings) -> Result<Settings, Failure> {
    let file = match config {
        Some(path) => Settings::load(path).map_err(Failure::Input)?,
        None => Settings::default(),
    };
    Ok(file.overlay(flags).effective())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = cli.config.as_ref();
    let result = match &cli.command {
        Command::Run(flags) => settings(config, flags).and_then(|s| commands::cmd_run(&s)),
        Command::Simulate(flags) => settings(config, flags).and_then(|s| commands::cmd_simulate(&s)),
        Command::Evaluate {
            settings: flags,
            inferred,
            rates,
            runs,
        } => settings(config, flags).and_then(|s| commands::cmd_evaluate(&s, runs, *inferred, rates)),
        Command::Ablate(flags) => settings(config, flags).and_then(|s| commands::cmd_ablate(&s)),
        Command::Trace { file, iteration } => commands::cmd_trace(file, *iteration),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("some topics failed; see status.tsv");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
