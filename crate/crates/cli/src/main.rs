mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use manifest::RunManifest;

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Attention(a) => commands::attention(a),
        Command::Map(a) => commands::map(a),
        Command::HoldoutCity(a) => commands::holdout_city(a),
        Command::Replay(a) => replay(&a.manifest),
    }
}

/// Re-parses the recorded argument vector in the recorded directory, after
/// checking the inputs still hash to the recorded digests.
fn replay(path: &std::path::Path) -> Result<()> {
    let manifest = RunManifest::load(path)?;
    manifest.verify_inputs()?;
    let cli = Cli::try_parse_from(&manifest.argv)
        .with_context(|| format!("manifest {} holds an invalid command line", path.display()))?;
    if matches!(cli.command, Command::Replay(_)) {
        anyhow::bail!("manifest {} records a replay", path.display());
    }
    manifest::set_argv(manifest.argv.clone());
    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("entering {}", manifest.cwd.display()))?;
    run(&cli)
}

fn run(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("starting the worker pool")?
            .install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    if !matches!(cli.command, Command::Replay(_)) {
        manifest::set_argv(std::env::args().collect());
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
