use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient samples for standardization: group `{group}` has {n} row(s), need at least 2")]
    InsufficientSamples { group: String, n: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("non-finite KL divergence between groups `{0}` and `{1}`")]
    NonFiniteKl(String, String),

    #[error("AUROC undefined: truth must contain both active and inactive entries")]
    DegenerateTruth,

    #[error("group `{group}` has {n} row(s), too few to place one in each of {folds} folds")]
    Stratification { group: String, n: usize, folds: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
