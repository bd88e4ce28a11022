use std::path::Path;

use scratch_tagger::Error;

/// Failure of a subcommand, sorted by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or a missing input file.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input data.
    #[error("{0}")]
    Data(String),
    /// Model file that cannot be loaded.
    #[error("{0}")]
    Model(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    fn classify(e: &Error, msg: String) -> Self {
        match e {
            Error::BadMagic | Error::UnsupportedVersion(_) | Error::Truncated | Error::Malformed(_) => CliError::Model(msg),
            Error::InvalidConfig(_) | Error::InvalidSpec(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }

    /// Library error met while handling `path`.
    pub fn at(path: &Path, e: Error) -> Self {
        Self::classify(&e, format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::classify(&e, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
