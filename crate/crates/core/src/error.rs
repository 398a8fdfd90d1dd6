use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value at index {index}: {context}")]
    Numerical { index: usize, context: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("problem is infeasible")]
    Infeasible,

    #[error("problem is unbounded")]
    Unbounded,

    #[error("solver exceeded {0} iterations")]
    MaxIterations(usize),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("replay pool `{pool}` cannot supply {requested} samples")]
    EmptyPool { pool: &'static str, requested: usize },

    #[error("extracted initial set is empty on the supplied samples")]
    EmptyInitialSet,

    #[error("estimated cost level is not positive ({0})")]
    DegenerateLhat(f64),

    #[error("composed barriers must share (L, beta, T)")]
    MismatchedConstants,

    #[error("duplicate generator points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
