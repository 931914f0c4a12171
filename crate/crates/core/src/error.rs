use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("symmetric eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate vector (norm below 1e-12) in {0}")]
    DegenerateVector(&'static str),

    #[error("bad network spec: {0}")]
    BadSpec(String),

    #[error("partition lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("group {group} has {size} samples; at least 2 are required")]
    GroupTooSmall { group: usize, size: usize },

    #[error("probe set for component {0} is empty")]
    EmptyProbeSet(usize),

    #[error("dataset has {n} rows but the batch size is {batch}")]
    DatasetTooSmall { n: usize, batch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },

    #[error("component {component} out of range for K = {k}")]
    BadComponent { component: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad numbers rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NoConvergence { .. } | Error::NonFinite(_)
        )
    }
}
