//! File formats, configuration, dataset synthesis and the command
//! implementations behind the `dds` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
