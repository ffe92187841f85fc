//! Command-line pipelines: synthesize data, train, evaluate, decompose and compare.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
