use thiserror::Error;

/// Errors raised by data validation, estimation, inference and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("row {row}: time {time} is negative or not finite")]
    NegativeTime { row: usize, time: f64 },

    #[error("row {row}: status {status} is not 0 or 1")]
    BadStatus { row: usize, status: f64 },

    #[error("row {row}: mixture vector {mix:?} is not on the probability simplex")]
    MixNotSimplex { row: usize, mix: Vec<f64> },

    #[error("row {row}: expected {expected} mixture components, found {found}")]
    InconsistentK { row: usize, expected: usize, found: usize },

    #[error("no uncensored observations to build an event-time grid")]
    NoEvents,

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid curve set: {0}")]
    InvalidCurve(String),

    #[error("invalid isotonic problem: {0}")]
    InvalidProblem(String),

    #[error("estimator requires {expected} components, sample has {found}")]
    UnsupportedComponents { expected: usize, found: usize },

    #[error("mixture model not identifiable: need at least {k} linearly independent mixture vectors")]
    NotIdentifiable { k: usize },

    #[error("zero denominator in imputation weights for observation {row}")]
    ZeroDenominator { row: usize },

    #[error("least-squares design matrix is singular")]
    SingularDesign,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("censoring calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("{failed} of {total} resampling replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by malformed or invalid input data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::NegativeTime { .. }
                | Error::BadStatus { .. }
                | Error::MixNotSimplex { .. }
                | Error::InconsistentK { .. }
                | Error::Parse(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
