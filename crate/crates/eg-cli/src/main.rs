//! `eg` — batch command-line surface for Ellipsoid-Gaussian modeling.
//!
//! Subcommands map one-to-one onto library operations: `simdata` generates
//! benchmark data sets, `fit` runs the posterior sampler (ellipsoid
//! initialization included), `sample`/`density` exercise a fixed parameter
//! set, and `predict`/`lppd`/`align`/`curve`/`diagnose` post-process a fit.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure.

mod commands;
mod config_file;

use clap::error::ErrorKind;
use clap::Parser;
use ellipsoid_gaussian::EgError;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                EgError::Numerical(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
