//! `gen-data`: simulate rolling sequences and write dataset CSVs.
//!
//! One invocation produces either a single file or a whole suite:
//! `--suite primitives` covers all six motion primitives at the requested
//! ratio, `--suite ratios` covers the four turning primitives at each of
//! {1.0, 0.8, 0.6, 0.4, 0.2}. Every file gets its own manifest whose
//! recorded seed and flags regenerate exactly that file in single mode.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use tenseg_core::graphdata::write_dataset;
use tenseg_core::simkit::{simulate_with_truth, write_pose_csv, NoiseModel, Primitive, SimConfig};
use tenseg_core::util::SeedTree;

use crate::common::resolve_out;
use crate::manifest::ManifestWriter;

/// Turning ratios of the `--suite ratios` sweep.
const RATIO_SUITE: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// Motion primitive: F, B, FL, FR, BL, or BR.
    #[arg(long, default_value = "F")]
    pub primitive: Primitive,
    /// Turning-gait tightness in (0, 1]; ignored by F/B.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
    /// Sequence length (seconds).
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Sample rate (Hz).
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Accelerometer noise std (m/s²).
    #[arg(long, default_value_t = 0.05)]
    pub noise_accel: f64,
    /// Gyroscope noise std (rad/s).
    #[arg(long, default_value_t = 0.005)]
    pub noise_gyro: f64,
    /// Tendon length noise std (m).
    #[arg(long, default_value_t = 0.001)]
    pub noise_tendon: f64,
    /// Drop the contact columns (write the 28-column unlabeled format).
    #[arg(long)]
    pub unlabeled: bool,
    /// Skip the `<stem>.truth.csv` ground-truth trajectory.
    #[arg(long)]
    pub no_truth: bool,
    /// Output CSV path (single mode) or name stem (suite mode).
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    /// Generate a batch instead of one file: `primitives` or `ratios`.
    #[arg(long, value_parser = ["primitives", "ratios"])]
    pub suite: Option<String>,
}

pub fn run(args: &GenDataArgs, seed: u64, out_dir: &Path) -> Result<()> {
    if !(args.ratio > 0.0 && args.ratio <= 1.0) {
        bail!("--ratio {} outside (0, 1]", args.ratio);
    }
    match args.suite.as_deref() {
        None => {
            let path = generate_one(args, args.primitive, args.ratio, seed, &args.out, out_dir)?;
            println!("wrote {}", path.display());
        }
        Some("primitives") => {
            let seeds = SeedTree::new(seed);
            for primitive in Primitive::ALL {
                let name = suite_file(&args.out, &primitive.as_str().to_lowercase())?;
                let child = seeds.child(primitive.as_str()).seed();
                let path = generate_one(args, primitive, args.ratio, child, &name, out_dir)?;
                println!("wrote {}", path.display());
            }
        }
        Some("ratios") => {
            let seeds = SeedTree::new(seed);
            for primitive in [Primitive::FL, Primitive::FR, Primitive::BL, Primitive::BR] {
                for ratio in RATIO_SUITE {
                    let tag = format!("{}_r{ratio}", primitive.as_str().to_lowercase());
                    let name = suite_file(&args.out, &tag)?;
                    let child = seeds.child(&tag).seed();
                    let path = generate_one(args, primitive, ratio, child, &name, out_dir)?;
                    println!("wrote {}", path.display());
                }
            }
        }
        Some(other) => bail!("unknown suite {other:?}"),
    }
    Ok(())
}

/// `dataset.csv` + tag `fr_r0.8` -> `dataset_fr_r0.8.csv`.
fn suite_file(stem: &Path, tag: &str) -> Result<PathBuf> {
    let base = stem
        .file_stem()
        .and_then(|s| s.to_str())
        .context("--out must have a UTF-8 file name")?;
    let ext = stem.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    Ok(stem.with_file_name(format!("{base}_{tag}.{ext}")))
}

fn generate_one(
    args: &GenDataArgs,
    primitive: Primitive,
    ratio: f64,
    seed: u64,
    out: &Path,
    out_dir: &Path,
) -> Result<PathBuf> {
    let config = SimConfig {
        primitive,
        turning_ratio: if primitive.is_turning() { ratio } else { 1.0 },
        duration: args.duration,
        sample_rate: args.rate,
        noise: NoiseModel {
            accel_std: args.noise_accel,
            gyro_std: args.noise_gyro,
            tendon_std: args.noise_tendon,
        },
        seed,
        ..SimConfig::default()
    };

    // config section of the manifest: the single-run flags that rebuild
    // exactly this file
    #[derive(Serialize)]
    struct Resolved<'a> {
        primitive: &'a str,
        ratio: f64,
        duration: f64,
        rate: f64,
        noise_accel: f64,
        noise_gyro: f64,
        noise_tendon: f64,
        unlabeled: bool,
        no_truth: bool,
        out: String,
    }
    let mut manifest = ManifestWriter::new(
        "gen-data",
        seed,
        &Resolved {
            primitive: primitive.as_str(),
            ratio: config.turning_ratio,
            duration: args.duration,
            rate: args.rate,
            noise_accel: args.noise_accel,
            noise_gyro: args.noise_gyro,
            noise_tendon: args.noise_tendon,
            unlabeled: args.unlabeled,
            no_truth: args.no_truth,
            out: out.display().to_string(),
        },
    )?;

    let output = simulate_with_truth(&config)?;
    let mut seq = output.sequence;
    if args.unlabeled {
        seq.contacts = None;
    }

    let path = resolve_out(out_dir, out)?;
    write_dataset(&path, &seq)
        .with_context(|| format!("writing dataset {}", path.display()))?;
    manifest.output(&path);

    if !args.no_truth {
        let truth_path = path.with_extension("truth.csv");
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(&truth_path)
                .with_context(|| format!("creating {}", truth_path.display()))?,
        );
        write_pose_csv(&mut w, &output.truth)?;
        manifest.output(&truth_path);
    }

    manifest.write_alongside(&path)?;
    Ok(path)
}
