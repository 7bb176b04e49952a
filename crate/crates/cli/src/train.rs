//! `train`: fit the contact-estimation network on labeled dataset CSVs.
//!
//! Windows from all input files are pooled, shuffled, and split into
//! train/validation; the checkpoint keeps the parameters of the epoch with
//! the best validation macro-F1. Per-epoch progress goes to stderr; stdout
//! and every output file are deterministic functions of the flags.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use tenseg_core::geometry::GroupLabel;
use tenseg_core::graphdata::WindowSet;
use tenseg_core::training::{save_checkpoint, train_with, write_history_csv, TrainConfig};
use tenseg_core::util::SeedTree;

use crate::common::{load_sequences, parse_group_mode, resolve_out};
use crate::manifest::ManifestWriter;

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Labeled dataset CSV (repeatable).
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// History length L fed to the network.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    /// Message-passing depth K.
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    /// Embedding width H.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Fraction of windows held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Step between window start indices when slicing sequences.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Cap the training set at this many windows (after the split).
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Plain forward pass instead of symmetry averaging (ablation baseline).
    #[arg(long)]
    pub no_symmetry: bool,
    /// Expand the training set by the full symmetry orbit (augmentation
    /// baseline; independent of --no-symmetry).
    #[arg(long)]
    pub augment: bool,
    /// Group action on windows: index-only or physical.
    #[arg(long, default_value = "index-only")]
    pub group_mode: String,
    /// Stop early once validation macro-F1 reaches this value.
    #[arg(long)]
    pub target_f1: Option<f64>,
    /// Checkpoint path; the epoch history lands at `<stem>.history.csv`.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs, seed: u64, out_dir: &Path) -> Result<()> {
    if !(0.0..1.0).contains(&args.val_frac) || args.val_frac == 0.0 {
        bail!("--val-frac {} outside (0, 1)", args.val_frac);
    }
    let mut manifest = ManifestWriter::new("train", seed, args)?;
    for path in &args.data {
        manifest.input(path);
    }

    let sequences = load_sequences(&args.data, true)?;
    let mut all = WindowSet::from_sequences(sequences, args.window, args.stride)?;
    let seeds = SeedTree::new(seed);
    all.shuffle(&mut seeds.child("shuffle").rng());
    let (mut train_set, val_set) = all.split(1.0 - args.val_frac);
    if let Some(n) = args.subsample {
        train_set.subsample(n, &mut seeds.child("subsample").rng());
    }
    if args.augment {
        train_set.augment(&GroupLabel::ALL);
    }
    if train_set.len() == 0 || val_set.len() == 0 {
        bail!(
            "split produced {} train / {} validation windows; need both nonempty",
            train_set.len(),
            val_set.len()
        );
    }
    eprintln!("{} train / {} validation windows", train_set.len(), val_set.len());

    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        layers: args.layers,
        hidden: args.hidden,
        window: args.window,
        seed,
        symmetry_enabled: !args.no_symmetry,
        group_mode: parse_group_mode(&args.group_mode)?,
    };

    let target = args.target_f1;
    let outcome = train_with(&train_set, &val_set, &config, |record, _| {
        eprintln!(
            "epoch {:>3}/{} loss {:.4} val acc {:.4} val F1 {:.4} ({:.1}s)",
            record.epoch,
            config.epochs,
            record.train_loss,
            record.val_accuracy,
            record.val_macro_f1,
            record.seconds
        );
        match target {
            Some(t) if record.val_macro_f1 >= t => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;

    let ckpt_path = resolve_out(out_dir, &args.out)?;
    save_checkpoint(&outcome.params, &config, &ckpt_path)?;
    manifest.output(&ckpt_path);

    let history_path = ckpt_path.with_extension("history.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&history_path)
            .with_context(|| format!("creating {}", history_path.display()))?,
    );
    write_history_csv(&mut w, &outcome.history, false)?;
    manifest.output(&history_path);
    manifest.write_alongside(&ckpt_path)?;

    println!(
        "best epoch {}: val accuracy {:.4}, val macro-F1 {:.4}",
        outcome.best_epoch, outcome.best_metrics.exact_match_accuracy, outcome.best_metrics.macro_f1
    );
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", history_path.display());
    Ok(())
}
