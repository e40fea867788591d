//! The `tbnn` command line: configuration, dataset loading, sample archives
//! and the `train`, `sample`, `eval`, `diagnose`, `analyze` and `sweep`
//! commands.

pub mod archive;
pub mod commands;
pub mod config;
pub mod error;
pub mod load;

pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitKind};
