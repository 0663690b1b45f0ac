use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("objective became non-finite at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("class {class} has {available} samples, fewer than the {requested} requested shots")]
    InsufficientClassSamples {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("bad magic bytes {0:?}, expected \"BADF\"")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    VersionMismatch(u32),

    #[error("truncated payload: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange { row: usize, label: usize, classes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by malformed or inconsistent data, as opposed
    /// to I/O failures or numeric divergence.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Divergence { .. })
    }
}
