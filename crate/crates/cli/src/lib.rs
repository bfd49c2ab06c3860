//! Config-driven experiment runner for the sparsim simulator.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, load_config, CliError, Command, Overrides, Report, Status};
pub use config::{parse_config, ConfigError, ExperimentConfig};
