use ssmup::Error;
use thiserror::Error as ThisError;

/// Failure of a CLI command, carrying its exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Inference(String),
    #[error("{0}")]
    Archive(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Inference(_) => 4,
            CliError::Archive(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Inference(_) => "inference",
            CliError::Archive(_) => "archive",
        }
    }

    /// Archive loading: every integrity problem maps to exit code 5.
    pub fn archive(e: Error) -> Self {
        match e {
            Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Archive(other.to_string()),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse(_) => CliError::Io(msg),
            Error::CorruptArchive(_) | Error::VersionMismatch { .. } => CliError::Archive(msg),
            Error::InvalidConfig(_)
            | Error::InvalidParams(_)
            | Error::ParamMismatch(_)
            | Error::ShapeMismatch(_)
            | Error::LengthMismatch { .. }
            | Error::NonBinary => CliError::Usage(msg),
            _ => CliError::Inference(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
