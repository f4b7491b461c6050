//! Library side of the `ldp-moe` command: config resolution, data loading,
//! the four subcommands and their output records.

pub mod commands;
pub mod config;
pub mod digest;
pub mod error;
pub mod load;
pub mod records;
pub mod report;

pub use error::CliError;
