//! Small helpers shared by the subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use tenseg_core::graphdata::{read_dataset, GroupActionMode, SensorSequence};

/// Resolve an output file against `--out-dir`, creating the directory.
/// Absolute paths are taken as given.
pub fn resolve_out(out_dir: &Path, file: &Path) -> Result<PathBuf> {
    let path = if file.is_absolute() {
        file.to_path_buf()
    } else {
        out_dir.join(file)
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    Ok(path)
}

/// Load dataset CSVs, insisting on contact labels when `labeled` is set.
pub fn load_sequences(paths: &[PathBuf], labeled: bool) -> Result<Vec<Arc<SensorSequence>>> {
    if paths.is_empty() {
        bail!("no --data files given");
    }
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let seq = read_dataset(path)
            .with_context(|| format!("reading dataset {}", path.display()))?;
        if labeled && !seq.is_labeled() {
            bail!(
                "dataset {} has no contact columns; this command needs labeled data",
                path.display()
            );
        }
        out.push(Arc::new(seq));
    }
    Ok(out)
}

pub fn parse_group_mode(s: &str) -> Result<GroupActionMode> {
    match s {
        "index-only" => Ok(GroupActionMode::IndexOnly),
        "physical" => Ok(GroupActionMode::Physical),
        other => bail!("unknown group mode {other:?} (expected index-only or physical)"),
    }
}

/// Shortest round-trip float formatting, matching the dataset writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
