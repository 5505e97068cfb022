mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use crate::commands::Timings;
use crate::config::{default_manifest_path, Manifest};
use crate::error::CliError;

fn run() -> Result<(), CliError> {
    let parsed = config::parse(std::env::args_os().collect())?;
    let cli = parsed.cli;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let mut timings = Timings::default();
    let primary = commands::run(&cli.command, &mut timings)?;
    let manifest = Manifest {
        subcommand: cli.command.name(),
        threads: rayon::current_num_threads(),
        resolved: parsed.resolved,
        timings: timings.0,
    };
    manifest.write(&cli.manifest.unwrap_or_else(|| default_manifest_path(&primary)))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Info(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("slnet: {}", e.to_string().trim_end());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
