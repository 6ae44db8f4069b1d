use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("rank deficient input: {0}")]
    RankDeficient(String),
    #[error("numerical failure at t={t}: {detail}")]
    Numerical { t: usize, detail: String },
    #[error("numerical failure in EM iteration {iteration} ({block}): {detail}")]
    EmFailure {
        iteration: usize,
        block: String,
        detail: String,
    },
    #[error("missing data: {0}")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, Error>;
