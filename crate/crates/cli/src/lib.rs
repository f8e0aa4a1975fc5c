//! Command-line experiments over tabular gamma-models.
//!
//! Each subcommand reads `key=value` configuration, writes its outputs into
//! an output directory, and records a [`RunManifest`](gamma_model::RunManifest)
//! from which `rerun` reproduces the same files.

pub mod args;
pub mod commands;
pub mod error;
pub mod problem;

use std::path::Path;

use gamma_model::Config;

pub use args::{Cli, Command};
pub use commands::{execute, rerun, CommandKind, MANIFEST_FILE};
pub use error::{CliError, CliResult};

/// Resolves configuration precedence (file, then `--set`, then `--seed`)
/// and dispatches.
pub fn run(cli: &Cli) -> CliResult<()> {
    let out = cli.out.as_path();
    let kind = match &cli.command {
        Command::Rerun { manifest } => {
            let m = rerun(manifest, out)?;
            println!("reran '{}' into {}", m.command, out.display());
            return Ok(());
        }
        Command::Oracle => CommandKind::Oracle,
        Command::Train { .. } => CommandKind::Train,
        Command::SweepHorizon => CommandKind::SweepHorizon,
        Command::ValueMap { .. } => CommandKind::ValueMap,
        Command::Control => CommandKind::Control,
        Command::Collect => CommandKind::Collect,
    };
    let config = resolve_config(cli)?;
    execute(kind, config, out)?;
    println!("wrote {}", Path::new(out).join(MANIFEST_FILE).display());
    Ok(())
}

fn resolve_config(cli: &Cli) -> CliResult<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| error::at_path(e, path))?,
        None => Config::new(),
    };
    for assignment in &cli.set {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::invalid(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
        config.set(k.trim(), v.trim());
    }
    match &cli.command {
        Command::Train { dataset: Some(p) } => config.set("dataset", p.display()),
        Command::ValueMap { model: Some(p) } => config.set("model", p.display()),
        _ => {}
    }
    if let Some(seed) = cli.seed {
        config.set("seed", seed);
    }
    Ok(config)
}
