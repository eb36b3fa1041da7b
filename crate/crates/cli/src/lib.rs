//! File formats, configuration and subcommands of the `camforge` tool.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod json;
pub mod pnm;
pub mod tensor;

pub use error::{CliError, Result};
