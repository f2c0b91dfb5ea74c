use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate observation for date {date}, asset {asset}")]
    DuplicateObservation { date: u32, asset: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("characteristic {characteristic} has zero cross-sectional dispersion in month {month}")]
    DegenerateColumn { month: u32, characteristic: String },

    #[error("characteristic {characteristic} has fewer than 2 observations in month {month}")]
    InsufficientObservations { month: u32, characteristic: String },

    #[error("no eligible assets remain in month {month}")]
    EmptyMonth { month: u32 },

    #[error("rank correlation between characteristics {i} and {j} is undefined in every month")]
    UndefinedCorrelation { i: usize, j: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot split further: largest sub-cluster is a singleton with {have} of {want} sub-clusters formed")]
    InfeasibleSplit { have: usize, want: usize },

    #[error("factor Gram matrix is singular in month {month}")]
    RankDeficient { month: u32 },

    #[error("loading normal equations are singular")]
    SingularLoadingSystem,

    #[error("factor covariance is singular at month {month}")]
    SingularCovariance { month: u32 },

    #[error("regressors are collinear: columns {columns:?}")]
    Collinear { columns: Vec<usize> },

    #[error("covariance block {block} is degenerate")]
    DegenerateCovariance { block: String },

    #[error("out-of-sample estimation failed at month {month}: {source}")]
    OosMonth {
        month: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
