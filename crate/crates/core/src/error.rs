//! Error type shared by every module, with the CLI exit-code mapping.

use thiserror::Error;

/// Failure classes surfaced by estimation, sampling and I/O.
#[derive(Debug, Error)]
pub enum MeloError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite: {0}")]
    NonPositiveDefinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("insufficient data: need more than {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("complete separation: {0}")]
    CompleteSeparation(String),
    #[error("posterior moments undefined (dof {dof} <= 2)")]
    MomentsUndefined { dof: f64 },
    #[error("all weights are zero for component {component}")]
    DegenerateWeights { component: usize },
    #[error("non-finite target value for component {component} at draw {draw}")]
    NonFiniteTarget { component: usize, draw: usize },
    #[error("sampler quality: {0}")]
    SamplerQuality(String),
    #[error("per-iteration augmentation statistics are missing")]
    MissingAugmentation,
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("summary is empty after discarding non-finite values")]
    EmptySummary,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("parse error at row {row}, column '{column}': '{value}'")]
    Parse { row: usize, column: String, value: String },
    #[error("invalid value at row {row}, column '{column}': {message}")]
    InvalidValue { row: usize, column: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MeloError>;

impl MeloError {
    /// 1 for configuration/usage, 2 for data, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use MeloError::*;
        match self {
            Config(_) | Json(_) | InvalidParameter(_) | UnsupportedDimension(_) => 1,
            EmptyFile(_) | MissingColumn(_) | Parse { .. } | InvalidValue { .. } | Io(_)
            | Csv(_) => 2,
            _ => 3,
        }
    }
}
