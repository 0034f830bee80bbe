use std::path::Path;

use stratfit_core::StratError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input files, schema violations, invalid options or configs.
    #[error("{0}")]
    Input(String),
    /// The data were fine but the estimation failed.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    #[must_use]
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<StratError> for CliError {
    fn from(e: StratError) -> Self {
        match e {
            StratError::NoConvergence(_)
            | StratError::DegenerateMixture(_)
            | StratError::NotInterior { .. }
            | StratError::TooFewClusters(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
