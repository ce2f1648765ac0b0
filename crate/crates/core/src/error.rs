use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the registration engine and its I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: [usize; 3],
        got: [usize; 3],
    },

    #[error("nonpositive variance {value} at latent index {index}")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("optimization diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("landmark sets are inconsistent: {0}")]
    Landmarks(String),

    #[error("bad NIfTI magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported NIfTI datatype code {code} in {path}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("big-endian NIfTI headers are not supported: {0}")]
    BigEndian(PathBuf),

    #[error("truncated NIfTI file {path}: need {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("invalid vector field file {path}: {reason}")]
    InvalidField { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const VALIDATION: i32 = 5;
}

impl Error {
    /// Exit code reported by the command-line tool for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Io { .. }
            | Error::BadMagic(_)
            | Error::UnsupportedDatatype { .. }
            | Error::BigEndian(_)
            | Error::Truncated { .. }
            | Error::InvalidField { .. } => exit::IO,
            Error::Diverged { .. } => exit::DIVERGED,
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::Landmarks(_)
            | Error::Generation(_) => exit::VALIDATION,
            Error::NonPositiveVariance { .. } => exit::OTHER,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
