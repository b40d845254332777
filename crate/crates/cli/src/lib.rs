//! Reproducible experiment pipelines over the `nullcal` library.

pub mod app;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod stages;

pub use app::{run, Cli, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
