//! `pmp`: batch front-end for extremal-flow analyses.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::Sink;

#[derive(Parser)]
#[command(name = "pmp", version, about = "Pontryagin extremal-flow analyses")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: `run.out` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Does not affect results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one backward extremal.
    Solve {
        /// Terminal point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z: Option<Vec<f64>>,
    },
    /// Trajectory field over a grid of terminal points.
    Figure1,
    /// Sweep for conjugate points.
    Conjugate,
    /// All extremals reaching an initial point.
    Reach {
        /// Initial point, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
    },
    /// Value function and multiplicity over the y grid.
    Value,
    /// A-priori bound report.
    Bounds,
    /// Perturb the terminal cost until the sweep is generic.
    Perturb,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = Some(out.clone());
    }
    match &cli.command {
        Command::Solve { z: Some(z) } => cfg.solve.z = z.clone(),
        Command::Reach { y: Some(y) } => cfg.reach.y = y.clone(),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = load(&cli)?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let dir = cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        flow: cfg.resolve()?,
        sink: Sink::new(&dir, cfg.hash())?,
        cfg,
    };
    match cli.command {
        Command::Solve { .. } => commands::solve(&ctx),
        Command::Figure1 => commands::figure1(&ctx),
        Command::Conjugate => commands::conjugate(&ctx),
        Command::Reach { .. } => commands::reach_cmd(&ctx),
        Command::Value => commands::value(&ctx),
        Command::Bounds => commands::bounds(&ctx),
        Command::Perturb => commands::perturb(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("pmp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
