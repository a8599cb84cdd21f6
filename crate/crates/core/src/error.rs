use thiserror::Error;

pub type Result<T> = std::result::Result<T, TomoError>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not Hermitian (max |M - M^H| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("vector is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("operator frame has no elements")]
    EmptyFrame,

    #[error("operator has zero Hilbert-Schmidt norm")]
    ZeroNorm,

    #[error("operator family is dependent or ill-conditioned at index {index} (condition number {condition:e})")]
    IllConditioned { index: usize, condition: f64 },

    #[error("frame does not define {0} for the given labels")]
    UndefinedLabel(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distribution has no positive mass")]
    ZeroMass,

    #[error("probability mass deficit: captured {captured}, need at least {required}")]
    MassDeficit { captured: f64, required: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
