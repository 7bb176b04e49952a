//! `tenseg` — reproducible pipelines for tensegrity contact and state
//! estimation: simulate rolling data, train and score the contact network,
//! predict contacts, and run the contact-aided filter.
//!
//! Every command takes its randomness from `--seed` alone and records the
//! fully resolved configuration in a manifest next to each artifact, so any
//! output file can be regenerated byte for byte from its manifest.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

mod common;
mod config;
mod estimate;
mod eval;
mod gen_data;
mod grad_check;
mod group_check;
mod manifest;
mod predict;
mod train;

#[derive(Debug, Parser)]
#[command(name = "tenseg", version, about = "Tensegrity contact/state estimation pipelines")]
struct Cli {
    /// Root seed for all randomness in this invocation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory output files are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Defaults file, one `key=value` per line (keys are long flag names);
    /// explicit command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate rolling sequences and write dataset CSVs.
    GenData(gen_data::GenDataArgs),
    /// Train the contact-estimation network on labeled datasets.
    Train(train::TrainArgs),
    /// Score a checkpoint on labeled datasets.
    Eval(eval::EvalArgs),
    /// Write per-timestep contact predictions for a dataset.
    Predict(predict::PredictArgs),
    /// Run the contact-aided state estimator over a dataset.
    Estimate(estimate::EstimateArgs),
    /// Print the symmetry group and verify its axioms.
    GroupCheck,
    /// Compare analytic gradients against finite differences.
    GradCheck(grad_check::GradCheckArgs),
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", render_error(&err));
            ExitCode::FAILURE
        }
    }
}

/// Flatten the cause chain like `{:#}`, minus links that only repeat the
/// message already embedded in their wrapper's `Display`.
fn render_error(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if parts.last().map_or(false, |prev| prev.ends_with(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn run() -> Result<ExitCode> {
    let mut argv: Vec<OsString> = std::env::args_os().collect();
    let command = Cli::command();
    let matches = command
        .clone()
        .try_get_matches_from(&argv)
        .unwrap_or_else(|e| e.exit());
    let mut cli = Cli::from_arg_matches(&matches)?;

    if let Some(config_path) = cli.config.clone() {
        let extra = config::expand(&command, &matches, &config_path)?;
        if !extra.is_empty() {
            argv.extend(extra);
            let matches = command
                .clone()
                .try_get_matches_from(&argv)
                .unwrap_or_else(|e| e.exit());
            cli = Cli::from_arg_matches(&matches)?;
        }
    }

    let (seed, out_dir) = (cli.seed, cli.out_dir.clone());
    match &cli.command {
        Command::GenData(args) => gen_data::run(args, seed, &out_dir)?,
        Command::Train(args) => train::run(args, seed, &out_dir)?,
        Command::Eval(args) => eval::run(args, seed, &out_dir)?,
        Command::Predict(args) => predict::run(args, seed, &out_dir)?,
        Command::Estimate(args) => estimate::run(args, seed, &out_dir)?,
        Command::GroupCheck => return group_check::run(),
        Command::GradCheck(args) => return grad_check::run(args, seed, &out_dir),
    }
    Ok(ExitCode::SUCCESS)
}
