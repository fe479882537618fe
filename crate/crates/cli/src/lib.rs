//! Command-line front end: config handling, the subcommands, report writing
//! and SVG plots.

pub mod config;
pub mod plot;
pub mod report;
pub mod run;

use std::path::Path;

pub use run::{run, Command, Overrides};

/// Exit code 1 for usage problems, 2 for anything wrong with the data or a
/// run over it.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<yieldbench::Error> for CliError {
    fn from(e: yieldbench::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<plot::PlotError> for CliError {
    fn from(e: plot::PlotError) -> Self {
        CliError::Data(e.to_string())
    }
}
