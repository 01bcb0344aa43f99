use thiserror::Error;

/// Errors produced by the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular block at level {level}, box {node}")]
    Singular { level: usize, node: usize },

    #[error("factorization is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("operator is not symmetric (relative asymmetry {0:.3e}); symmetrize it first")]
    NotSymmetric(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code: 1 for input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Dimension { .. } | Error::Parse { .. } | Error::Io(_) => 1,
            Error::Singular { .. }
            | Error::NotPositiveDefinite(_)
            | Error::NotSymmetric(_)
            | Error::Numerical(_) => 2,
        }
    }

    /// Prefix the message with the pipeline stage that produced it.
    pub fn context(self, stage: &str) -> Self {
        match self {
            Error::Numerical(m) => Error::Numerical(format!("{stage}: {m}")),
            Error::NotPositiveDefinite(m) => Error::NotPositiveDefinite(format!("{stage}: {m}")),
            Error::Input(m) => Error::Input(format!("{stage}: {m}")),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
