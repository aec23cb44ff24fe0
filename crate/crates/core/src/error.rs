use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants fall into three classes that the CLI maps to exit codes:
/// domain errors (bad input), numerical failures, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance factorization failed at pivot {pivot} (pivot value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    #[error(
        "contraction failure on [{start}, {end}]: successive differences grew \
         (ratio {ratio:.4}) for {streak} consecutive iterations"
    )]
    ContractionFailure {
        start: f64,
        end: f64,
        ratio: f64,
        streak: usize,
    },

    #[error("sub-interval length {tau:e} is below the grid spacing {dt:e}; refine the grid")]
    Resolution { tau: f64, dt: f64 },

    #[error("no convergence on [{start}, {end}] within {iterations} iterations (last difference {diff:e})")]
    NotConverged {
        start: f64,
        end: f64,
        iterations: usize,
        diff: f64,
    },

    #[error(
        "shift inversion failed at t = {time}: contraction ratio {ratio:.4} after \
         {iterations} iterations (invertibility horizon exceeded)"
    )]
    HorizonExceeded {
        time: f64,
        ratio: f64,
        iterations: usize,
    },

    #[error("exponential overflow at t = {time}: exponent {exponent:e}")]
    Overflow { time: f64, exponent: f64 },

    #[error("ODE step failed at t = {time} after {halvings} step halvings")]
    StepFailure { time: f64, halvings: u32 },

    #[error("{count} of {total} Monte Carlo samples were non-finite")]
    NonFiniteSamples { count: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 1,
            Error::Io(_) | Error::Parse(_) => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
