//! `eval`: score a trained checkpoint on labeled dataset CSVs.
//!
//! Prints exact-match accuracy and macro-F1 and writes a one-row metrics
//! CSV with the per-endcap F1 breakdown.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use tenseg_core::graphdata::WindowSet;
use tenseg_core::training::{evaluate, load_checkpoint};

use crate::common::{load_sequences, resolve_out};
use crate::manifest::ManifestWriter;

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Labeled dataset CSV (repeatable).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Step between window start indices.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Score the plain forward pass even for a symmetry-trained model.
    #[arg(long)]
    pub no_symmetry: bool,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

pub fn run(args: &EvalArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let model_path = args.model.as_ref().context("--model is required")?;
    let mut manifest = ManifestWriter::new("eval", seed, args)?;
    manifest.input(model_path);
    for path in &args.data {
        manifest.input(path);
    }

    let (params, train_config) = load_checkpoint(model_path)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))?;
    let sequences = load_sequences(&args.data, true)?;
    let dataset = WindowSet::from_sequences(sequences, train_config.window, args.stride)?;
    let symmetry = train_config.symmetry_enabled && !args.no_symmetry;
    let metrics = evaluate(&params, &dataset, symmetry)?;

    let out_path = resolve_out(out_dir, &args.out)?;
    let mut csv = String::from(
        "windows,exact_match_accuracy,macro_f1,f1_endcap0,f1_endcap1,f1_endcap2,f1_endcap3,f1_endcap4,f1_endcap5\n",
    );
    csv.push_str(&format!("{},{},{}", metrics.windows, metrics.exact_match_accuracy, metrics.macro_f1));
    for counts in &metrics.per_endcap {
        csv.push_str(&format!(",{}", counts.f1()));
    }
    csv.push('\n');
    std::fs::write(&out_path, csv)
        .with_context(|| format!("writing metrics {}", out_path.display()))?;
    manifest.output(&out_path);
    manifest.write_alongside(&out_path)?;

    println!("windows {}", metrics.windows);
    println!("exact-match accuracy {:.4}", metrics.exact_match_accuracy);
    println!("macro F1 {:.4}", metrics.macro_f1);
    println!("wrote {}", out_path.display());
    Ok(())
}
