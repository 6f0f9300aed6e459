//! File formats and subcommands behind the `gqnet` binary.

pub mod coef;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod number;
pub mod scenario;

pub use commands::{run, Cli, Outcome};
pub use error::{CliError, Result};
