use thiserror::Error;

/// Errors produced by fitting, estimation and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset must contain at least one trajectory")]
    EmptyDataset,

    #[error("trajectory {index} has horizon {found}, expected {expected}")]
    HorizonMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot split {n} items into {folds} folds")]
    TooFewSamples { n: usize, folds: usize },

    #[error("design matrix is rank deficient ({rows} rows, {cols} features); increase the ridge penalty")]
    RankDeficient { rows: usize, cols: usize },

    #[error("nuisance `{0}` is required by this estimator but was not provided")]
    MissingNuisance(&'static str),

    #[error("unknown nuisance family `{0}` (expected one of q, mu, dq, dmu)")]
    UnknownFamily(String),

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("fitting step {step} failed: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ascent iteration {iteration} failed: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
