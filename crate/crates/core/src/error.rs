use thiserror::Error;

/// Errors raised anywhere in the simulation, estimation and policy stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid score {value} at index {index}")]
    InvalidScore { index: usize, value: f64 },
    #[error("propensity must be strictly positive, got {0}")]
    ZeroPropensity(f64),
    #[error("estimator has no observations yet")]
    EmptyHistory,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("overall disparity needs at least two groups, got {0}")]
    UndefinedMetric(usize),
    #[error("merit must be strictly positive, got {0}")]
    ZeroMerit(f64),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("LP solver failed: {0}")]
    SolverFailure(String),
    #[error("matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("subset selection failed: {0}")]
    Selection(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
