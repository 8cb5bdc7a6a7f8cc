//! Library behind the `dtsemnet` command: run configs, subcommands and the
//! benchmark harness.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, CliResult};
