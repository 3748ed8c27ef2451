use std::path::PathBuf;

/// Error type shared by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("range of the dominated matrix is not contained in the range of the dominating one (residual {residual:e})")]
    RangeContainment { residual: f64 },

    #[error("augmented design has rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown point id {0}")]
    UnknownPoint(usize),

    #[error("exhaustive enumeration over {size} points exceeds the limit of {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
