// SPDX-License-Identifier: Apache-2.0

//! The `leomap` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 probe adapter failure.

pub mod args;
mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
pub use error::CliError;

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Scan(a) => commands::scan(a),
        Command::Pops(a) => commands::pops(a),
        Command::Map(a) => commands::map(a),
        Command::Stats(a) => commands::stats(a),
        Command::Sim(c) => commands::sim(c),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
