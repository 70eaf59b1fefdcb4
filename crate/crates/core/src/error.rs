use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A source cannot support the unbiased kernel estimates.
    #[error("degenerate source: class {} has {count} sample(s), need at least {required}", .class + 1)]
    DegenerateSource {
        class: usize,
        count: usize,
        required: usize,
    },

    /// A zero source proportion was about to be used as a divisor.
    #[error("division guard: source proportion of class {} is zero", .class + 1)]
    ZeroProportion { class: usize },

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error in {path} at line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contamination error: {0}")]
    Contamination(String),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error category, used for process exit codes and bench status cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) | Error::Config(_) => ErrorKind::Usage,
            Error::Numerical { .. } => ErrorKind::Numerical,
            Error::DegenerateSource { .. }
            | Error::ZeroProportion { .. }
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::EmptyDataset(_)
            | Error::Contamination(_)
            | Error::Generation(_)
            | Error::Io(_) => ErrorKind::Data,
        }
    }

    /// Short machine-readable tag for diagnostics and result rows.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::DegenerateSource { .. } => "degenerate_source",
            Error::ZeroProportion { .. } => "zero_proportion",
            Error::Numerical { .. } => "numerical",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Config(_) => "config",
            Error::Contamination(_) => "contamination",
            Error::Generation(_) => "generation",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
