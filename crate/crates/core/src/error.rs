use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("non-finite {what} at step {step}; last good checkpoint: {last_good:?}")]
    NonFinite {
        what: String,
        step: u64,
        last_good: Option<PathBuf>,
    },
    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the file system rather than by inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Image { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
