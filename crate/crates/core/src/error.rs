use thiserror::Error;

use crate::domain::LocationId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("location {0:?} is outside the domain")]
    OutOfDomain(LocationId),

    #[error("placement {0:?} lies outside the restriction set")]
    OutsideRestriction(LocationId),

    #[error("restriction set is empty")]
    EmptyRestriction,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value {value} observed at {at:?}")]
    NonFiniteObservation { at: LocationId, value: f64 },

    #[error(
        "cholesky factorization of a {size}x{size} matrix failed even with jitter {max_jitter:e} \
         (smallest pivot {min_pivot:e}, diagonal range [{min_diag:e}, {max_diag:e}])"
    )]
    Factorization {
        size: usize,
        max_jitter: f64,
        min_pivot: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("enumeration of {combinations} placements exceeds the brute-force guard of {limit}")]
    InstanceTooLarge { combinations: f64, limit: f64 },

    #[error("seed {seed:?} is unsafe: q = {value}")]
    UnsafeSeed { seed: LocationId, value: f64 },

    #[error("no cell satisfies the seed margin {margin} after {attempts} attempts")]
    NoSafeSeed { margin: f64, attempts: usize },

    #[error("every cell lies inside an obstacle")]
    NoFreeCell,

    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite cell in {file} at row {row}, column {col}")]
    NonFiniteCell { file: String, row: usize, col: usize },

    #[error("negative density {value} at row {row}, column {col}")]
    NegativeDensity { row: usize, col: usize, value: f64 },

    #[error("parse error in {file}: {message}")]
    Parse { file: String, message: String },

    #[error("batch mismatch: {0}")]
    BatchMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
