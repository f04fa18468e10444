use std::fmt;

/// Errors raised by the localization pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a documented precondition.
    InvalidArgument(String),
    /// The log-normal fit has zero variance (no shadowing), so the
    /// likelihood is undefined.
    DegenerateVariance,
    /// An iterative solver hit its iteration cap before meeting tolerance.
    /// `best` is the last iterate, which is also the best seen.
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    /// The requested problem size is outside the supported range.
    Unsupported(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateVariance => {
                write!(f, "degenerate variance: shadowing sigma is zero, likelihood undefined")
            }
            Error::NotConverged {
                iterations,
                residual,
                ..
            } => write!(
                f,
                "did not converge after {iterations} iterations (residual={residual:.3e})"
            ),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
