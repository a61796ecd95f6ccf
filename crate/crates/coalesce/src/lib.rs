//! File formats, configuration, parallel replica runs and the subcommands
//! of the `coalesce` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod runner;

pub use error::{CliError, Result};
