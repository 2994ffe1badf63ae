//! The `boostwood` command-line tool.
//!
//! Subcommands: `fit`, `predict`, `simulate`, `cv`, `variants` and
//! `stop-test`. Results go to stdout (or `--out`); timing lines go to stderr
//! and start with `# `.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod archive;
mod args;
mod commands;
mod error;
mod query;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use archive::{ModelArchive, TrainingInfo, FORMAT_VERSION};
pub use args::Cli;
pub use error::CliError;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut buffer = Vec::new();
    let result = commands::execute(&cli, &mut buffer);
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(&buffer).and_then(|()| stdout.flush());
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
