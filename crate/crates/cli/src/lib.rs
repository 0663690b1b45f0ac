//! Command-line layer over the `protoadapt` core: argument parsing, run
//! configuration, checkpoints, manifests and reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use args::Cli;
pub use commands::run;
pub use error::CliError;
