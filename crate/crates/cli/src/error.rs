use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A file could not be read or failed validation.
    #[error("{path}: {message}")]
    Input { path: String, message: String },

    /// Invalid arguments or an analysis precondition that does not hold.
    #[error("{0}")]
    Invalid(String),

    /// A self-check failed, e.g. reproduced figures disagree with fixtures.
    #[error("{0}")]
    Check(String),

    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        CliError::Input { path: path.display().to_string(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } | CliError::Invalid(_) => 2,
            CliError::Check(_) | CliError::Output(_) => 1,
        }
    }
}

impl From<factorlab::Error> for CliError {
    fn from(e: factorlab::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

/// Attaches a file name to library errors raised while parsing that file.
pub trait InFile<T> {
    fn in_file(self, path: &Path) -> Result<T, CliError>;
}

impl<T> InFile<T> for factorlab::Result<T> {
    fn in_file(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| CliError::input(path, e.to_string()))
    }
}
