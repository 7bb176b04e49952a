//! `estimate`: run the contact-aided state estimator over a dataset CSV.
//!
//! Contacts come either from the dataset's own label columns
//! (`--contacts truth`) or from a prediction file (`--contacts pred.csv`)
//! such as the one `predict` writes; warmup rows there count as
//! "no contact", which simply leaves the filter dead-reckoning until the
//! first prediction lands. The output is one pose row per input row.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::UnitQuaternion;
use serde::Serialize;
use tenseg_core::graphdata::ContactVector;
use tenseg_core::inekf::{final_drift_percent, run_estimator, EstimatorState, FilterConfig};
use tenseg_core::simkit::{path_length, read_pose_csv};

use crate::common::{fmt_f64, load_sequences, resolve_out};
use crate::manifest::ManifestWriter;

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Dataset CSV with the IMU and tendon streams.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `truth` for the dataset's own contact columns, or a prediction CSV
    /// (first six columns c0..c5, one row per timestep).
    #[arg(long, default_value = "truth")]
    pub contacts: String,
    /// Ground-truth trajectory CSV (from `gen-data`) for the drift report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Gyro white-noise std (rad/s).
    #[arg(long, default_value_t = 1e-4)]
    pub gyro_std: f64,
    /// Accelerometer white-noise std (m/s²).
    #[arg(long, default_value_t = 1e-2)]
    pub accel_std: f64,
    /// Contact-slip process noise (m/√s).
    #[arg(long, default_value_t = 1e-3)]
    pub slip_std: f64,
    /// Contact measurement noise (m).
    #[arg(long, default_value_t = 1e-3)]
    pub meas_std: f64,
    /// Std assigned to a freshly added contact point (m).
    #[arg(long, default_value_t = 1.0)]
    pub new_contact_std: f64,
    /// Initial attitude/velocity/position std (shared, rad and m).
    #[arg(long, default_value_t = 1e-2)]
    pub init_std: f64,
    /// Trajectory CSV path.
    #[arg(long, default_value = "traj.csv")]
    pub out: PathBuf,
}

pub fn run(args: &EstimateArgs, seed: u64, out_dir: &Path) -> Result<()> {
    let data_path = args.data.as_ref().context("--data is required")?;
    let mut manifest = ManifestWriter::new("estimate", seed, args)?;
    manifest.input(data_path);

    let sequences = load_sequences(std::slice::from_ref(data_path), false)?;
    let seq = &sequences[0];
    let contacts: Vec<ContactVector> = if args.contacts == "truth" {
        seq.contacts.clone().with_context(|| {
            format!(
                "dataset {} has no contact columns; pass `--contacts <pred.csv>`",
                data_path.display()
            )
        })?
    } else {
        let path = PathBuf::from(&args.contacts);
        manifest.input(&path);
        read_contact_file(&path, seq.len())?
    };

    let config = FilterConfig {
        gyro_noise_std: args.gyro_std,
        accel_noise_std: args.accel_std,
        contact_slip_std: args.slip_std,
        measurement_noise_std: args.meas_std,
        new_contact_std: args.new_contact_std,
        initial_rotation_std: args.init_std,
        initial_velocity_std: args.init_std,
        initial_position_std: args.init_std,
    };
    let initial = EstimatorState::at_canonical_rest(&config);
    let trajectory = run_estimator(seq, &contacts, &config, initial)?;

    let out_path = resolve_out(out_dir, &args.out)?;
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&out_path)
            .with_context(|| format!("creating {}", out_path.display()))?,
    );
    writeln!(w, "t,x,y,z,qw,qx,qy,qz,vx,vy,vz")?;
    for (k, state) in trajectory.iter().enumerate() {
        let q = UnitQuaternion::from_matrix(state.rotation());
        let p = state.position();
        let v = state.velocity();
        let cols = [
            k as f64 / seq.sample_rate,
            p.x,
            p.y,
            p.z,
            q.w,
            q.i,
            q.j,
            q.k,
            v.x,
            v.y,
            v.z,
        ];
        let line: Vec<String> = cols.iter().map(|&c| fmt_f64(c)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    manifest.output(&out_path);

    let last = trajectory.last().expect("nonempty trajectory");
    println!(
        "final position {} {} {} ({} steps)",
        fmt_f64(last.position().x),
        fmt_f64(last.position().y),
        fmt_f64(last.position().z),
        trajectory.len()
    );
    if let Some(truth_path) = &args.truth {
        manifest.input(truth_path);
        let mut r = std::io::BufReader::new(
            std::fs::File::open(truth_path)
                .with_context(|| format!("opening {}", truth_path.display()))?,
        );
        let truth = read_pose_csv(&mut r)
            .with_context(|| format!("reading trajectory {}", truth_path.display()))?;
        println!(
            "drift {:.4}% of {:.3} m path",
            final_drift_percent(&trajectory, &truth),
            path_length(&truth)
        );
    }
    manifest.write_alongside(&out_path)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

/// Read per-timestep contact flags: header optional, six 0/1 columns, any
/// extra columns (such as `predict`'s warmup flag) ignored.
fn read_contact_file(path: &Path, expected_rows: usize) -> Result<Vec<ContactVector>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading contacts {}", path.display()))?;
    let mut out = Vec::with_capacity(expected_rows);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let mut flags = [0u8; 6];
        let mut fields = line.split(',');
        for (i, slot) in flags.iter_mut().enumerate() {
            let field = fields
                .next()
                .with_context(|| format!("{}:{}: fewer than 6 columns", path.display(), lineno + 1))?
                .trim();
            *slot = match field {
                "0" => 0,
                "1" => 1,
                other => bail!(
                    "{}:{}: column {i} is {other:?}, expected 0 or 1",
                    path.display(),
                    lineno + 1
                ),
            };
        }
        out.push(ContactVector::new(flags));
    }
    if out.len() != expected_rows {
        bail!(
            "{} has {} contact rows, dataset has {} timesteps",
            path.display(),
            out.len(),
            expected_rows
        );
    }
    Ok(out)
}
