//! Library side of the `qsurf` command-line tool: configuration parsing,
//! subcommands and artifact output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run_command, Command, Outcome, RunError};
pub use config::{parse_config, ConfigError, RunConfig};
