//! `gpmap`: simulate surveys, train uncertain-input SVGP maps, evaluate them
//! and localize on them.
//!
//! Exit codes: 0 on success, 1 on a pipeline error (printed to stderr as a
//! single `CODE: message` line), 2 on invalid usage.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpmap::config::Config;
use gpmap::optim::InputMode;

#[derive(Parser, Debug)]
#[command(name = "gpmap", version, about = "Uncertain-input SVGP terrain mapping and particle-filter localization")]
struct Cli {
    /// TOML configuration; defaults are used for anything it omits.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input mode for propagate, train, predict, evaluate and localize.
    #[arg(long, global = true, default_value = "ui", value_parser = parse_mode)]
    mode: InputMode,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory holding every artifact.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    s.parse().map_err(|e: gpmap::Error| e.to_string())
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate terrain and fly the lawnmower survey.
    Simulate,
    /// Build the per-beam input dataset for --mode.
    Propagate,
    /// Train a map on the training region of the dataset.
    Train,
    /// Sample the posterior mean and variance on the evaluation grid.
    Predict,
    /// Write the error report of a trained map.
    Evaluate,
    /// Run the particle filter across the held-out region.
    Localize,
    /// Run the noise level × seed × mode matrix.
    Experiment,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn run(cli: &Cli) -> gpmap::Result<Vec<String>> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::PrintConfig = cli.command {
        return Ok(cfg.to_toml().lines().map(str::to_string).collect());
    }
    let out = commands::Layout::new(&cli.out)?;
    let mode = cli.mode;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Propagate => commands::propagate(&cfg, mode, &out),
        Command::Train => commands::train(&cfg, mode, &out),
        Command::Predict => commands::predict(&cfg, mode, &out),
        Command::Evaluate => commands::evaluate(&cfg, mode, &out),
        Command::Localize => commands::localize(&cfg, mode, &out),
        Command::Experiment => commands::experiment(&cfg, &out),
        Command::PrintConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(lines) => {
            if !cli.quiet {
                for l in lines {
                    println!("{l}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.code());
            ExitCode::from(1)
        }
    }
}
