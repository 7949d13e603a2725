use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the command-line driver to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Physics,
    Convergence,
    Io,
    Usage,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unphysical loss model at this z: tau_s({z}) = {value} lies outside [0, 1]")]
    UnphysicalLoss { z: f64, value: f64 },

    #[error("pump ratio z = {0} outside the model domain (requires z > -1, |z| < 1)")]
    PumpDomain(f64),

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("no heralding events: conditional state undefined (1 - N = {0:e})")]
    NoHeralding(f64),

    #[error("unphysical parameter combination: {0}")]
    Unphysical(String),

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error("grid truncation error: {0}")]
    Truncation(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("sampling efficiency too low: {0}")]
    Efficiency(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("unidentifiable parameter combination: {0}")]
    Unidentifiable(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::Parse { .. } => ErrorKind::Config,
            Error::Usage(_) => ErrorKind::Usage,
            Error::Io { .. } => ErrorKind::Io,
            Error::Convergence(_) | Error::Efficiency(_) => ErrorKind::Convergence,
            _ => ErrorKind::Physics,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Prefixes the field of a parameter error with its configuration section.
pub(crate) fn in_section(section: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
