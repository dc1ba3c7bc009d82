//! The `romi` command-line front end.

pub mod commands;
pub mod config;
pub mod decide;
pub mod error;
pub mod report;

pub use error::{CliError, CliResult};
