//! `covfk`: batch front-end for the covariant Feynman-Kac estimators.
//!
//! Exit codes: 0 success, 1 runtime or acceptance failure, 2 config error.

mod chern;
mod config;
mod error;
mod fk;
mod report;
mod spec;
mod trace;
mod validate;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};
use crate::report::{FaultFlag, RunOptions, RunResult};
use crate::validate::{Suite, ValidateConfig};

#[derive(Parser)]
#[command(
    name = "covfk",
    version,
    about = "Covariant Feynman-Kac estimators and oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Semigroup or heat-kernel estimate.
    Fk(RunArgs),
    /// Trace formula with spectral comparison.
    Trace(RunArgs),
    /// Chern character components on the round sphere.
    Chern(RunArgs),
    /// Invariant suites.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Result file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall-clock times in the result.
    #[arg(long)]
    timing: bool,
    /// Inject a deliberate defect.
    #[arg(long, value_enum)]
    fault: Option<FaultFlag>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config suite.
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[command(flatten)]
    common: Common,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            workers: self.workers,
            timing: self.timing,
            fault: self.fault,
        }
    }
}

fn emit(result: &RunResult, out: Option<&PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(result).expect("results serialize");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write stdout: {e}"))),
    }
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    let (result, common) = match &cli.command {
        Command::Fk(args) => {
            let opts = args.common.options();
            (fk::run(config::load(&args.config)?, &opts)?, &args.common)
        }
        Command::Trace(args) => {
            let opts = args.common.options();
            (
                trace::run(config::load(&args.config)?, &opts)?,
                &args.common,
            )
        }
        Command::Chern(args) => {
            let opts = args.common.options();
            (
                chern::run(config::load(&args.config)?, &opts)?,
                &args.common,
            )
        }
        Command::Validate(args) => {
            let opts = args.common.options();
            let mut cfg = match &args.config {
                Some(path) => config::load::<ValidateConfig>(path)?.value,
                None => ValidateConfig::default(),
            };
            if let Some(suite) = args.suite {
                cfg.suite = suite;
            }
            let (result, summary) = validate::run(cfg, &opts)?;
            eprint!("{}", validate::summary_table(&summary));
            (result, &args.common)
        }
    };
    emit(&result, common.out.as_ref())?;
    if !result.pass {
        for check in result.checks.iter().filter(|c| !c.pass) {
            eprintln!(
                "check failed: {} = {:e} > {:e}",
                check.name, check.value, check.tolerance
            );
        }
    }
    Ok(result.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
