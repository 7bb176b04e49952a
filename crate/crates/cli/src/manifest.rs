//! Run manifests: a JSON record written next to every artifact, holding the
//! fully resolved configuration that produced it.
//!
//! The manifest is the reproducibility receipt. Every default is
//! materialized and all randomness descends from the recorded seed, so
//! feeding the recorded flags back to the same subcommand regenerates the
//! artifact byte for byte. Wall-clock timing lives here and only here —
//! output files never embed anything nondeterministic.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    /// Root seed of the invocation (suite members record their derived seed).
    pub seed: u64,
    /// Every flag of the subcommand with defaults filled in.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

/// Collects inputs/outputs while a command runs, then serializes the
/// manifest alongside the primary artifact as `<stem>.manifest.json`.
pub struct ManifestWriter {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestWriter {
    pub fn new(subcommand: &'static str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(ManifestWriter {
            manifest: RunManifest {
                tool: "tenseg",
                version: env!("CARGO_PKG_VERSION"),
                subcommand,
                seed,
                config: serde_json::to_value(config).context("serializing resolved config")?,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_seconds: 0.0,
            },
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Write the manifest next to `artifact` and return its path.
    pub fn write_alongside(mut self, artifact: &Path) -> Result<PathBuf> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = artifact.with_extension("manifest.json");
        let mut body = serde_json::to_vec_pretty(&self.manifest)?;
        body.push(b'\n');
        std::fs::write(&path, body)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}
