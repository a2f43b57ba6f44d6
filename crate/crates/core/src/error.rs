use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate data: total variance {0:e}")]
    DegenerateData(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid Dirichlet concentration {0}")]
    InvalidAlpha(f64),
    #[error("empty pool")]
    EmptyPool,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown embedder `{0}`")]
    UnknownEmbedder(String),
    #[error("too few points: {points} points for {components} components")]
    TooFewPoints { points: usize, components: usize },
    #[error("cost matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("invalid fraction {0}")]
    InvalidFraction(f64),
    #[error("too few clients: {0}")]
    TooFewClients(usize),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("cannot sample {requested} clients out of {available}")]
    TooMany { requested: usize, available: usize },
    #[error("client `{0}` has no training examples")]
    EmptyClient(String),
    #[error("no client deltas in round")]
    EmptyRound,
    #[error("aggregation weights sum to zero")]
    ZeroWeight,
    #[error("evaluation block is empty")]
    EmptyBlock,
    #[error("feature value {value} outside [0, 1]")]
    OutOfRangeFeatures { value: f64 },
    #[error("no client has enough examples of label {label}")]
    NoQualifyingClients { label: usize },
    #[error("parse error at `{field}`: {reason}")]
    Parse { field: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
