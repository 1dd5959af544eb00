//! Command-line workflows over the `lino` library.

pub mod commands;
pub mod config;
mod error;

pub use commands::{run, Outcome};
pub use config::{Command, DataSource, RunConfig, SplitChoice};
pub use error::CliError;
