use thiserror::Error;

/// Errors produced by the dose-escalation engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid criterion: {0}")]
    InvalidCriterion(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// All posterior mass underflowed, or a functional produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("trial is complete")]
    TrialComplete,

    #[error("cohort of {requested} patients exceeds the remaining capacity of {remaining}")]
    CapacityExceeded { requested: usize, remaining: usize },

    #[error("dose {dose} is not admissible (admissible: 1..={max_admissible})")]
    Inadmissible { dose: usize, max_admissible: usize },

    #[error("no patients recorded")]
    NoData,

    /// Configuration problem at a JSON field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
