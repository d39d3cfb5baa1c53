use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub const DATA: u8 = 2;
    pub const USAGE: u8 = 64;

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => Self::USAGE,
            CliError::Data(_) | CliError::Io { .. } => Self::DATA,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

/// Domain errors come from flag values; data errors from the input.
impl From<simcrit::Error> for CliError {
    fn from(e: simcrit::Error) -> Self {
        match e {
            simcrit::Error::Domain(m) => CliError::Usage(m),
            simcrit::Error::Data(m) => CliError::Data(m),
        }
    }
}
