//! Config files and run manifests.
//!
//! Both use the flat `key = value` format from `slnet_core::io`. Keys are the
//! long flag names of the chosen subcommand. A manifest additionally records
//! `subcommand`, `tool_version` and `timing.*` entries, which are checked or
//! skipped when the manifest is read back as a config.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};
use slnet_core::io::{atomic_write, format_config, read_config};

use crate::args::Cli;
use crate::error::CliError;

const GLOBALS: [&str; 3] = ["threads", "config", "manifest"];

pub struct Parsed {
    pub cli: Cli,
    /// `(long flag, value)` for every argument of the subcommand, defaults included.
    pub resolved: Vec<(String, String)>,
}

pub fn parse(argv: Vec<OsString>) -> Result<Parsed, CliError> {
    let matches = Cli::command().try_get_matches_from(&argv)?;
    let first = Cli::from_arg_matches(&matches)?;
    let Some(path) = first.config.clone() else {
        return finish(matches);
    };
    let sub = first.command.name();
    let extra = config_args(sub, &path, first.threads.is_some())?;
    let at = argv
        .iter()
        .skip(1)
        .position(|a| a == sub)
        .map(|i| i + 1)
        .ok_or_else(|| CliError::Usage(format!("cannot locate subcommand '{sub}' in the arguments")))?;
    let mut merged = argv[..=at].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[at + 1..]);
    finish(Cli::command().try_get_matches_from(merged)?)
}

fn finish(matches: ArgMatches) -> Result<Parsed, CliError> {
    let cli = Cli::from_arg_matches(&matches)?;
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let mut resolved = Vec::new();
    for arg in sub_cmd.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        if GLOBALS.contains(&long) || matches!(arg.get_action(), ArgAction::Help | ArgAction::Version) {
            continue;
        }
        if let Some(values) = sub_matches.get_raw(arg.get_id().as_str()) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            resolved.push((long.to_string(), joined.join(",")));
        }
    }
    Ok(Parsed { cli, resolved })
}

/// Flags equivalent to the config file at `path` for subcommand `sub`.
fn config_args(sub: &str, path: &Path, threads_on_cli: bool) -> Result<Vec<String>, CliError> {
    let entries = read_config(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(sub).expect("known subcommand");
    let mut out = Vec::new();
    for e in entries {
        let bad = |msg: String| CliError::Usage(format!("config {} line {}: {msg}", path.display(), e.line));
        match e.key.as_str() {
            "subcommand" => {
                if e.value != sub {
                    return Err(bad(format!("written for '{}', used with '{sub}'", e.value)));
                }
                continue;
            }
            "tool_version" => continue,
            k if k.starts_with("timing.") => continue,
            "threads" => {
                if !threads_on_cli {
                    out.push(format!("--threads={}", e.value));
                }
                continue;
            }
            "config" | "manifest" => return Err(bad(format!("'{}' cannot be set from a config file", e.key))),
            _ => {}
        }
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(e.key.as_str()))
            .ok_or_else(|| bad(format!("unknown key '{}' for '{sub}'", e.key)))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match e.value.as_str() {
                "true" => out.push(format!("--{}", e.key)),
                "false" => {}
                v => return Err(bad(format!("'{}' takes true or false, got '{v}'", e.key))),
            }
        } else {
            out.push(format!("--{}={}", e.key, e.value));
        }
    }
    Ok(out)
}

pub struct Manifest {
    pub subcommand: &'static str,
    pub threads: usize,
    pub resolved: Vec<(String, String)>,
    pub timings: Vec<(String, f64)>,
}

impl Manifest {
    pub fn render(&self) -> Result<String, CliError> {
        let mut pairs: Vec<(String, String)> = vec![
            ("subcommand".into(), self.subcommand.into()),
            ("tool_version".into(), env!("CARGO_PKG_VERSION").into()),
            ("threads".into(), self.threads.to_string()),
        ];
        pairs.extend(self.resolved.iter().cloned());
        pairs.extend(
            self.timings
                .iter()
                .map(|(k, v)| (format!("timing.{k}"), format!("{v:.6}"))),
        );
        Ok(format_config(&pairs)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        Ok(atomic_write(path, self.render()?.as_bytes())?)
    }
}

/// `<output>.manifest`, next to the primary output.
pub fn default_manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}
