//! Command implementations behind the `fronthaul-sim` binary.

pub mod commands;
pub mod config;
mod error;
pub mod output;

pub use commands::{cmd_converge, cmd_sweep, cmd_validate, ConvergeReport, RunOptions, SweepReport};
pub use error::CliError;
