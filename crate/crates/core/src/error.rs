use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` row {row}: cannot parse `{value}` as a number")]
    TypeMismatch {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{0}` has the wrong type for this use")]
    WrongColumnType(String),
    #[error("dataset is empty after dropping {dropped} incomplete rows")]
    EmptyDataset { dropped: usize },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("group `{0}` has no rows")]
    EmptyGroup(String),
    #[error("term index {index} out of range ({len} terms)")]
    TermIndex { index: usize, len: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("fixed-effect information matrix is singular; collinear columns: {0:?}")]
    Singular(Vec<String>),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("fitted model does not belong to this design: {0}")]
    FitMismatch(String),
    #[error("not enough eligible groups: {found} found, at least {needed} needed")]
    TooFewGroups { found: usize, needed: usize },
    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("lineup panels mix design kinds")]
    MixedKinds,
    #[error("lineup needs {expected} null panels, got {got}")]
    NullCount { expected: usize, got: usize },
    #[error("reveal requires explicit confirmation")]
    RevealNotConfirmed,
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
