use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use contractsolve_core::FbpOptions;

mod config;
mod error;
mod output;
mod run;

use config::{load_config, Mode, Overrides};
use error::CliError;

const MAX_ITERS_VAR: &str = "CONTRACTSOLVE_MAX_ITERS";

/// Optimal quantiles and insurance contracts under bounded-slope constraints.
#[derive(Debug, Parser)]
#[command(name = "contractsolve", version)]
struct Cli {
    /// Overrides `mode` in the config file.
    #[arg(value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    config: PathBuf,
    /// Fixed multiplier; skips calibration.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "grid-n")]
    grid_n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn options() -> Result<FbpOptions, CliError> {
    let mut opts = FbpOptions::default();
    if let Ok(raw) = std::env::var(MAX_ITERS_VAR) {
        opts.max_policy_iterations = raw
            .trim()
            .parse()
            .ok()
            .filter(|n: &usize| *n > 0)
            .ok_or_else(|| CliError::Validation {
                field: MAX_ITERS_VAR.into(),
                detail: format!("expected a positive integer, got `{raw}`"),
            })?;
    }
    Ok(opts)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        mode: cli.mode,
        lambda: cli.lambda,
        grid_n: cli.grid_n,
        out: cli.out,
    };
    let config = load_config(&cli.config, &overrides)?;
    run::run(&config, &options()?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("contractsolve: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
