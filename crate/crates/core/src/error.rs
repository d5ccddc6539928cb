use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no neighbors: unit '{unit}' is the only member of its cluster")]
    NoNeighbors { unit: String },

    #[error("incomplete panel: no value for unit '{unit}', variable '{variable}', period {period}")]
    IncompletePanel {
        unit: String,
        variable: String,
        period: i64,
    },

    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("unknown unit '{0}'")]
    UnknownUnit(String),

    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("empty donor pool for unit '{0}'")]
    EmptyDonorPool(String),

    #[error("non-finite value in solver input")]
    NonFinite,

    #[error("invalid penalty {0}: must be finite and non-negative")]
    InvalidPenalty(f64),

    #[error("grid oracle supports at most {max} donors, got {found}")]
    TooManyDonors { max: usize, found: usize },

    #[error("invalid grid resolution {0}")]
    InvalidResolution(f64),

    #[error("solver did not converge after {0} iterations")]
    NotConverged(usize),

    #[error("matching needs {needed} control units, only {available} available")]
    NotEnoughControls { needed: usize, available: usize },

    #[error("within-cluster CV undefined: {0}")]
    CvUndefined(String),

    #[error("cross-validation failed: every pseudo-treated unit had an empty donor pool")]
    AllPseudoUnitsSkipped,

    #[error("no placebo distribution: no included placebo run carries this estimand")]
    NoPlaceboDistribution,

    #[error("series mismatch: {0}")]
    SeriesMismatch(String),

    #[error("accounting identity violated: {0}")]
    IdentityViolation(String),

    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("row {row}: duplicate key (unit '{unit}', variable '{variable}', time {time})")]
    DuplicateKey {
        row: usize,
        unit: String,
        variable: String,
        time: i64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible simulation spec: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
