use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate column name `{0}`")]
    DuplicateColumnName(String),
    #[error("vector column `{0}` has zero dimension")]
    ZeroDimension(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate tuple id {0}")]
    DuplicateId(u64),
    #[error("unknown tuple id {0}")]
    UnknownId(u64),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown table handle {0}")]
    UnknownTable(usize),
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("table is empty")]
    EmptyTable,
    #[error("no index for vector column {0}")]
    IndexMissing(usize),
    #[error("predicate on `{predicate}` does not match histogram of `{histogram}`")]
    ColumnMismatch { predicate: String, histogram: String },
    #[error("no histogram for column `{0}`")]
    MissingHistogram(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("network is frozen")]
    FrozenNetwork,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("encoder bundle is not fitted: {0}")]
    NotFitted(String),
    #[error("incremental update called with no new rows")]
    EmptyBatch,
    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("engine not ready: {0}")]
    EngineNotReady(String),
    #[error("insufficient training data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("optimizer model missing")]
    ModelMissing,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("empty input")]
    EmptyInput,
    #[error("too many hyperplanes: {0} (at most 16)")]
    TooManyPlanes(usize),
    #[error("could not fill selectivity strata after {emitted} queries; unfillable strata: {unfilled:?}")]
    StratumInfeasible { emitted: usize, unfilled: Vec<usize> },
    #[error("ground truth misaligned: {workload} queries vs {ground_truth} ground-truth rows")]
    MisalignedGroundTruth { workload: usize, ground_truth: usize },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
