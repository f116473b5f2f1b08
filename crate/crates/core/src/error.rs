//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem with an input table: bad header, wrong field
    /// count, unparseable value. Parsing stops at the first of these.
    #[error("table format error at line {line}: {message}")]
    TableFormat { line: u64, message: String },

    /// A row parsed cleanly but violates a record invariant.
    #[error("invalid record at line {line}: {message}")]
    InvalidRecord { line: u64, message: String },

    /// Semantic error count exceeded the configured cap.
    #[error("too many invalid rows ({count}); first: {first}")]
    TooManyInvalidRows { count: usize, first: String },

    #[error("no games for league {0}")]
    EmptySelection(String),

    #[error("empirical HA undefined for season {season}: no non-neutral games")]
    EmpiricalHaUndefined { season: i32 },

    #[error("season {season} not present in dataset")]
    UnknownSeason { season: i32 },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("parameter vector has dimension {got}, layout expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in parameter vector at index {0}")]
    NonFiniteInput(usize),

    #[error("non-positive scale value {value} for parameter {name}")]
    NonPositiveScale { name: String, value: f64 },

    #[error("invalid sampler config: {0}")]
    InvalidSamplerConfig(String),

    #[error("failed to find a finite initial point after {0} attempts")]
    InitializationFailed(usize),

    #[error("invalid filter config: {0}")]
    InvalidFilterConfig(String),

    #[error("diagnostics require {0}")]
    InsufficientChains(String),

    #[error("generalized Pareto fit needs at least 5 tail points, got {0}")]
    TooFewTailPoints(usize),

    #[error("degenerate tail: all excesses equal")]
    DegenerateTail,

    #[error("log-likelihood matrices disagree: {0}")]
    MismatchedLoglik(String),

    #[error("credible level must lie in (0,1), got {0}")]
    InvalidLevel(f64),

    #[error("{0}")]
    InvalidAnalysisInput(String),

    #[error("invalid simulation config: {0}")]
    InvalidTruth(String),

    #[error("cannot build a schedule: {0}")]
    ImpossibleSchedule(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable one-token error class for machine-parsable CLI output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::TableFormat { .. } => "table-format",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::TooManyInvalidRows { .. } => "too-many-invalid-rows",
            Error::EmptySelection(_) => "empty-selection",
            Error::EmpiricalHaUndefined { .. } => "empirical-ha-undefined",
            Error::UnknownSeason { .. } => "unknown-season",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFiniteInput(_) => "non-finite-input",
            Error::NonPositiveScale { .. } => "non-positive-scale",
            Error::InvalidSamplerConfig(_) => "invalid-sampler-config",
            Error::InitializationFailed(_) => "initialization-failed",
            Error::InvalidFilterConfig(_) => "invalid-filter-config",
            Error::InsufficientChains(_) => "insufficient-chains",
            Error::TooFewTailPoints(_) => "too-few-tail-points",
            Error::DegenerateTail => "degenerate-tail",
            Error::MismatchedLoglik(_) => "mismatched-loglik",
            Error::InvalidLevel(_) => "invalid-level",
            Error::InvalidAnalysisInput(_) => "invalid-analysis-input",
            Error::InvalidTruth(_) => "invalid-truth",
            Error::ImpossibleSchedule(_) => "impossible-schedule",
            Error::Artifact(_) => "artifact",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
