//! `--config <file>` support: a plain-text defaults file, one `key=value`
//! per line, where keys are the long flag names of the invoked subcommand
//! (global flags included). Values from the file fill in flags the user did
//! not type; explicit command-line flags always win.
//!
//! Mechanically the file is expanded into extra argv tokens appended after
//! the original ones, and only for flags whose value did not come from the
//! command line — so the second parse never sees a duplicate.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::{ArgMatches, ValueSource};

/// Keys that must not appear in a config file.
const RESERVED: [&str; 3] = ["config", "help", "version"];

pub fn expand(
    command: &clap::Command,
    matches: &ArgMatches,
    path: &Path,
) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let (sub_name, sub_matches) = matches
        .subcommand()
        .context("--config requires a subcommand")?;
    let sub_command = command
        .get_subcommands()
        .find(|c| c.get_name() == sub_name)
        .context("unknown subcommand")?;

    let mut extra = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if RESERVED.contains(&key) {
            bail!("{}:{}: {key:?} cannot be set from a config file", path.display(), lineno + 1);
        }
        let id = key.replace('-', "_");
        let arg = sub_command
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| a.get_id().as_str() == id)
            .with_context(|| {
                format!(
                    "{}:{}: {key:?} is not a flag of `{sub_name}`",
                    path.display(),
                    lineno + 1
                )
            })?;
        if sub_matches.value_source(&id) == Some(ValueSource::CommandLine) {
            continue; // explicit flag wins over the file
        }
        let takes_value = matches!(
            arg.get_action(),
            clap::ArgAction::Set | clap::ArgAction::Append
        );
        if takes_value {
            extra.push(OsString::from(format!("--{key}={value}")));
        } else {
            // boolean switch: presence is the only signal clap accepts
            match value {
                "true" | "1" => extra.push(OsString::from(format!("--{key}"))),
                "false" | "0" => {}
                other => bail!(
                    "{}:{}: switch {key:?} takes true/false, got {other:?}",
                    path.display(),
                    lineno + 1
                ),
            }
        }
    }
    // Deduplicate repeats of single-value keys within the file (last wins),
    // keeping every occurrence of multi-value flags such as --data.
    let mut seen = std::collections::HashSet::new();
    let mut deduped: Vec<OsString> = Vec::with_capacity(extra.len());
    for token in extra.into_iter().rev() {
        let text = token.to_string_lossy();
        let key = text.split('=').next().unwrap_or("").to_string();
        let multi = sub_command
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| format!("--{}", a.get_id().as_str().replace('_', "-")) == key)
            .map_or(false, |a| matches!(a.get_action(), clap::ArgAction::Append));
        if multi || seen.insert(key) {
            deduped.push(token);
        }
    }
    deduped.reverse();
    Ok(deduped)
}
