//! `grad-check`: finite-difference audit of the training gradients.
//!
//! Builds a random model and mini-batch from the seed, backpropagates the
//! full symmetry-averaged forward + BCE pipeline, and compares a strided
//! subset of coordinates against central differences.

use std::path::Path;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tenseg_core::training::gradient_check;

use crate::common::parse_group_mode;

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    /// Message-passing depth K.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Embedding width H.
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// History length L.
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Check the plain forward pass instead of the symmetry average.
    #[arg(long)]
    pub no_symmetry: bool,
    /// Group action: index-only or physical.
    #[arg(long, default_value = "index-only")]
    pub group_mode: String,
    /// Number of parameter coordinates to probe (evenly strided).
    #[arg(long, default_value_t = 160)]
    pub coords: usize,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

pub fn run(args: &GradCheckArgs, seed: u64, _out_dir: &Path) -> Result<ExitCode> {
    let report = gradient_check(
        args.layers,
        args.hidden,
        args.window,
        args.batch,
        !args.no_symmetry,
        parse_group_mode(&args.group_mode)?,
        seed,
        args.coords,
    )?;
    println!(
        "checked {} of {} parameter coordinates",
        report.coords_checked, report.param_count
    );
    println!("max relative error {:e}", report.max_rel_error);
    if report.max_rel_error < args.tol {
        println!("PASS (tol {:e})", args.tol);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "FAIL: max relative error {:e} exceeds tol {:e}",
            report.max_rel_error, args.tol
        );
        Ok(ExitCode::FAILURE)
    }
}
