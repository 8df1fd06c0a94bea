use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix has {got} entries, expected {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("width {width} is smaller than rank {rank}")]
    WidthTooSmall { width: usize, rank: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate index {index}: selected singular value {value:e} is below tolerance")]
    DegenerateIndex { index: usize, value: f64 },

    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("point lies on an activation boundary (layer {layer}, unit {unit})")]
    Boundary { layer: usize, unit: usize },

    #[error("no valid (non-boundary) samples out of {rejected}")]
    AllSamplesDegenerate { rejected: usize },

    #[error("width {width} cannot host the construction, need at least {needed}")]
    InsufficientWidth { width: usize, needed: usize },

    #[error("depth {depth} is too small for the construction, need at least {needed}")]
    InsufficientBudget { depth: usize, needed: usize },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("replicated layers deviate from the simulated network by {deviation:e}")]
    ReplicationMismatch { deviation: f64 },

    #[error("{got} samples supplied, at least {needed} required")]
    InsufficientSamples { got: usize, needed: usize },

    #[error("unknown verify suite `{0}`")]
    UnknownSuite(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) | Error::BadShape { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::SvdNoConvergence { .. } => "svd_no_convergence",
            Error::WidthTooSmall { .. } => "width_too_small",
            Error::Domain(_) => "domain",
            Error::DegenerateIndex { .. } => "degenerate_index",
            Error::Degenerate(_) => "degenerate",
            Error::Boundary { .. } => "activation_boundary",
            Error::AllSamplesDegenerate { .. } => "all_samples_degenerate",
            Error::InsufficientWidth { .. } => "width_insufficient",
            Error::InsufficientBudget { .. } => "budget_insufficient",
            Error::InvalidPlan(_) => "invalid_plan",
            Error::ReplicationMismatch { .. } => "replication_mismatch",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::UnknownSuite(_) => "unknown_suite",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
