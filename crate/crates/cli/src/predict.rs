//! `predict`: per-timestep contact predictions for one dataset CSV.
//!
//! The output has exactly one row per input row. A window of L samples is
//! needed before the first prediction exists, so rows 0..L−1 are emitted
//! all-zero with `warmup=1` instead of being dropped — downstream consumers
//! stay index-aligned with the sensor file.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use tenseg_core::geometry::build_canonical_topology;
use tenseg_core::geometry::build_d3_group;
use tenseg_core::graphdata::WindowSet;
use tenseg_core::training::{load_checkpoint, predict_samples};

use crate::common::{load_sequences, resolve_out};
use crate::manifest::ManifestWriter;

/// Windows materialized per inference call; a memory knob only.
const CHUNK: usize = 256;

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Dataset CSV (labeled or unlabeled; labels are ignored).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Predict with the plain forward pass even for a symmetry-trained model.
    #[arg(long)]
    pub no_symmetry: bool,
    /// Prediction CSV path.
    #[arg(long, default_value = "pred.csv")]
    pub out: PathBuf,
}

pub fn run(args: &PredictArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let data_path = args.data.as_ref().context("--data is required")?;
    let model_path = args.model.as_ref().context("--model is required")?;
    let mut manifest = ManifestWriter::new("predict", seed, args)?;
    manifest.input(data_path);
    manifest.input(model_path);

    let (params, train_config) = load_checkpoint(model_path)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))?;
    let sequences = load_sequences(std::slice::from_ref(data_path), false)?;
    let rows = sequences[0].len();
    let window = train_config.window;
    let dataset = WindowSet::from_sequences(sequences, window, 1)
        .with_context(|| format!("slicing {} rows into windows of {window}", rows))?;
    let symmetry = train_config.symmetry_enabled && !args.no_symmetry;
    let group = build_d3_group(&build_canonical_topology())?;

    let out_path = resolve_out(out_dir, &args.out)?;
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&out_path)
            .with_context(|| format!("creating {}", out_path.display()))?,
    );
    writeln!(w, "c0,c1,c2,c3,c4,c5,warmup")?;
    for _ in 0..window - 1 {
        writeln!(w, "0,0,0,0,0,0,1")?;
    }
    let mut predicted = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let samples: Vec<_> = chunk
            .iter()
            .map(|&i| dataset.materialize(i, &group, train_config.group_mode))
            .collect();
        for contact in predict_samples(&params, &samples, symmetry)? {
            let f = contact.0;
            writeln!(w, "{},{},{},{},{},{},0", f[0], f[1], f[2], f[3], f[4], f[5])?;
            predicted += 1;
        }
    }
    w.flush()?;
    assert_eq!(predicted + window - 1, rows, "one output row per input row");
    manifest.output(&out_path);
    manifest.write_alongside(&out_path)?;

    println!(
        "wrote {} ({rows} rows: {predicted} predicted, {} warmup)",
        out_path.display(),
        window - 1
    );
    Ok(())
}
