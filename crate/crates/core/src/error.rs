use thiserror::Error;

/// Errors produced by the structure-learning toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("index {index} out of range for {len} vertices")]
    Index { index: usize, len: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("problem too large for exhaustive search: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("clique set is empty; no structure can be formed")]
    EmptyCliqueSet,

    #[error("min-hd-oracle selection requires a ground-truth structure")]
    MissingTruth,

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    #[error("implied communality of variable {row} is {communality}, not below 1")]
    InvalidVariance { row: usize, communality: f64 },

    #[error("generation failed: {0}")]
    GenerationFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("column {column} has zero variance")]
    ConstantColumn { column: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
