//! Command-line front end for the `tcindiff` pricing engine.

pub mod commands;
pub mod config;
pub mod report;

use std::path::Path;

pub use commands::{apply_overrides, run, Command, Overrides, Report};
pub use config::{parse_config, render_config, ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] tcindiff::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 1 input error, 2 numeric failure, 3 model inconsistency.
    pub fn exit_code(&self) -> i32 {
        use tcindiff::Error as E;
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Core(E::InvalidInput(_)) => 1,
            CliError::Core(E::Arbitrage { .. } | E::EmptyDomain { .. }) => 3,
            CliError::Core(E::Numeric(_) | E::Domain { .. } | E::Infeasible { .. }) => 2,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    Ok(parse_config(&text)?)
}
