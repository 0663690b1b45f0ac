use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    /// 0 success, 2 usage, 3 I/O, 4 data validation, 5 numeric divergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Divergence(_) => 5,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Core error raised while touching `path`.
    pub(crate) fn at(path: &Path, err: protoadapt::Error) -> Self {
        match err {
            protoadapt::Error::Io(source) => CliError::io(path, source),
            other => match CliError::from(other) {
                CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
                e => e,
            },
        }
    }
}

impl From<protoadapt::Error> for CliError {
    fn from(err: protoadapt::Error) -> Self {
        use protoadapt::Error as E;
        match err {
            E::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            E::Divergence { .. } => CliError::Divergence(err.to_string()),
            E::InvalidParameter(_) => CliError::Usage(err.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
