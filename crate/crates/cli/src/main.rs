//! `smpd`: batch runner for the detector simulations and the tomography
//! pipeline. Every run writes a config snapshot, CSV tables with column
//! dictionaries and a summary JSON, all tagged with the snapshot hash.

mod config;
mod experiments;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{apply_override, default_options, load_device, Experiment, Resolved};

#[derive(Parser)]
#[command(name = "smpd", version, about = "Single-microwave-photon detector experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Device config JSON; `paper_device.json` falls back to the bundled file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override of a device or experiment key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Named input state for the tomography experiments.
    #[arg(long)]
    state: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(value_enum)]
        experiment: Experiment,
        /// Positional alternative to `--config`.
        config_path: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment per value of a numeric key, in parallel.
    Sweep {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

pub enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
    SweepPoints(usize),
}

impl Failure {
    fn classify(e: anyhow::Error) -> Self {
        match e.downcast_ref::<smpd_core::Error>() {
            Some(c) if c.is_numerical() => Failure::Numerical(e),
            _ => Failure::Validation(e),
        }
    }
}

/// Device and options documents with the command-line overrides applied.
fn documents(common: &Common, positional: Option<&PathBuf>) -> Result<(serde_json::Value, serde_json::Value)> {
    let path = common.config.as_ref().or(positional);
    let mut device = load_device(path.map(|p| p.as_path()))?;
    let mut options = default_options();
    if let Some(seed) = common.seed {
        options["seed"] = seed.into();
    }
    if let Some(state) = &common.state {
        options["state"] = state.clone().into();
    }
    for o in &common.overrides {
        apply_override(&mut device, &mut options, o)?;
    }
    Ok((device, options))
}

fn run_once(experiment: Experiment, device: serde_json::Value, options: serde_json::Value, out: &std::path::Path) -> Result<(Resolved, output::Outcome, Vec<PathBuf>)> {
    let r = Resolved::new(experiment, device, options)?;
    let outcome = experiments::run(&r)?;
    let files = output::write_outcome(out, experiment.name(), &r.hash, &r.snapshot, &outcome)?;
    Ok((r, outcome, files))
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    let common = match &cli.command {
        Command::Run { common, .. } | Command::Sweep { common, .. } => common.clone(),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Validation(anyhow::anyhow!("--threads must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Validation(e.into()))?;
    }
    match cli.command {
        Command::Run { experiment, config_path, common } => {
            let (device, options) = documents(&common, config_path.as_ref()).map_err(Failure::Validation)?;
            let (_, _, files) = run_once(experiment, device, options, &common.out).map_err(Failure::classify)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Sweep { experiment, param, values, common } => {
            let (device, options) = documents(&common, None).map_err(Failure::Validation)?;
            let report = sweep::sweep(experiment, &device, &options, &param, &values, &common.out).map_err(Failure::Validation)?;
            println!("{}", report.index.display());
            if report.failed > 0 {
                return Err(Failure::SweepPoints(report.failed));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::SweepPoints(n)) => {
            eprintln!("{n} sweep point(s) failed; see the index CSV");
            ExitCode::from(4)
        }
    }
}
