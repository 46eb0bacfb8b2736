//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed dataset file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },

    #[error("graph `{id}` is not symmetric: |A(i,j) - A(j,i)| = {deviation:e} exceeds 1e-6")]
    AsymmetricMatrix { id: String, deviation: f64 },

    #[error("graph `{id}` has label {label}, expected 0 or 1")]
    LabelOutOfRange { id: String, label: i64 },

    #[error("graph `{id}` has {found} nodes, dataset declares {expected}")]
    InconsistentNodeCount {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("entry {value} of graph `{id}` lies outside [-1, 1]")]
    EntryOutOfRange { id: String, value: f64 },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid synthetic dataset spec: {0}")]
    BadSpec(String),

    #[error("template size k = {0} is too large for exhaustive permutation search (max 6)")]
    KTooLarge(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric (deviation {0:e})")]
    NotSymmetric(f64),

    #[error("Jacobi eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("graph has {n} nodes, fewer than the template size {k}")]
    GraphTooSmall { n: usize, k: usize },

    #[error("padding constant gamma = {0} is outside [-1, 1]")]
    BadGamma(f64),

    #[error("routing needs at least one iteration, got {0}")]
    BadIterations(usize),

    #[error("cannot compute the loss of an empty batch")]
    EmptyBatch,

    #[error(
        "cached activations were computed for parameter version {cached}, model is at {current}"
    )]
    StaleActivations { cached: u64, current: u64 },

    #[error("cannot evaluate on an empty graph set")]
    EmptyEvalSet,

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("no graph with id `{0}` in dataset")]
    UnknownGraphId(String),

    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
