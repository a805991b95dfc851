use chrono::NaiveDateTime;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive price {price} at {timestamp}")]
    NonPositivePrice {
        timestamp: NaiveDateTime,
        price: f64,
    },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lag range: max_lag {max_lag} must be >= 1 and < series length {n}")]
    LagRange { max_lag: usize, n: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid calendar: {0}")]
    InvalidCalendar(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unparseable header: {0}")]
    BadHeader(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric failure: non-finite conditional volatility at observation {t}")]
    NumericFailure { t: usize },

    #[error("rank-deficient information matrix in direction of parameter '{parameter}'")]
    RankDeficient { parameter: String },

    #[error("all fits failed: {0}")]
    AllFitsFailed(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
