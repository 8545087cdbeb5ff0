use std::fmt;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation (e.g. a point outside Ω).
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid parameters or inconsistent inputs.
    #[error("validation error: {0}")]
    Validation(String),
    /// A numerical routine failed (singular system, non-finite values, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An iterative method ran out of iterations.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
        last: Option<Vec<f64>>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl fmt::Display) -> Self {
        Error::Validation(msg.to_string())
    }

    pub(crate) fn numerical(msg: impl fmt::Display) -> Self {
        Error::Numerical(msg.to_string())
    }

    /// Process exit code used by the command-line front end:
    /// 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Validation(_) | Error::Config(_) => 2,
            Error::Numerical(_) | Error::NotConverged { .. } => 3,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
