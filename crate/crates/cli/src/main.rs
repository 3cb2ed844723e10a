//! `ssrnas` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use config::{parse_config, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "ssrnas",
    version,
    about = "Joint-dimensional differentiable architecture search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search and write its trajectory, architecture and gap report.
    Search(RunArgs),
    /// Retrain every architecture of a small space and rank them.
    Oracle(RunArgs),
    /// L0-equivalence sweep and finite-difference gradient suite.
    Verify(RunArgs),
    /// Compare regularizers over a list of seeds.
    Ablate(RunArgs),
    /// Print the size of the configured space.
    Cardinality(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; every key is optional.
    #[arg(short, long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory holding run directories. Overrides `output_dir` and
    /// SSRNAS_OUTPUT_ROOT.
    #[arg(long)]
    output_root: Option<PathBuf>,
    /// Name of this run's directory. Overrides `run_id`.
    #[arg(long)]
    run_id: Option<String>,
}

fn load(arg: &ConfigArg) -> Result<RunConfig, CliError> {
    match &arg.config {
        Some(path) => parse_config(path),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    let (name, args) = match command {
        Command::Cardinality(c) => return commands::cardinality(&load(&c)?),
        Command::Search(a) => ("search", a),
        Command::Oracle(a) => ("oracle", a),
        Command::Verify(a) => ("verify", a),
        Command::Ablate(a) => ("ablate", a),
    };
    let mut cfg = load(&args.config)?;
    cfg.resolve(name, args.run_id, args.output_root)?;
    if name == "oracle" {
        commands::oracle_precheck(&cfg)?;
    }
    let dir = output::create_run_dir(&cfg)?;
    match name {
        "search" => commands::search(&cfg, &dir),
        "oracle" => commands::oracle(&cfg, &dir),
        "verify" => commands::verify(&cfg, &dir),
        _ => commands::ablate(&cfg, &dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if matches!(
                e.kind(),
                ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand
            ) {
                eprintln!("\n{}", Cli::command().render_help());
            }
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
