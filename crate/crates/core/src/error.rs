use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index ({row}, {col}) out of bounds for a {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid sparse structure: {0}")]
    InvalidStructure(String),

    /// `pivot` is the index of the failing pivot in the caller's (unpermuted) numbering.
    #[error("matrix is not positive definite (non-positive pivot at index {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("location {index} at ({x}, {y}) lies outside the mesh")]
    OutsideMesh { index: usize, x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("factorization failed at working parameters {params:?}: {source}")]
    Factorization {
        params: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("chain {chain} diverged at iteration {iteration}: {message}")]
    Diverged {
        chain: usize,
        iteration: usize,
        message: String,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
