//! Command-line front end: dataset generation, cross-validated training,
//! evaluation, reconstruction export and the template-size sweep.

pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;

pub use commands::{run, Cli, Command};
pub use config::{CommonArgs, RunConfig};
pub use error::CliError;
