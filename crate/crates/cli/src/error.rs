use std::path::Path;

use thiserror::Error;

/// Failures of a command, grouped by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input artifact error: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<causelab::Error> for CliError {
    fn from(err: causelab::Error) -> Self {
        use causelab::Error as E;
        match err {
            E::Config(msg) => CliError::Config(msg),
            E::Numeric(msg) => CliError::Numeric(msg),
            E::InsufficientData(_) => CliError::Config(err.to_string()),
            E::DegenerateObjective => CliError::Numeric(err.to_string()),
            E::DimensionMismatch { .. }
            | E::LengthMismatch(_)
            | E::UnknownEnv(_)
            | E::Contract(_)
            | E::MissingField(_) => CliError::Input(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
