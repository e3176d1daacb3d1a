use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("study `{0}` not found")]
    StudyNotFound(String),
    #[error("lineup `{0}` not found")]
    LineupNotFound(String),
    #[error("study `{0}` already exists")]
    DuplicateStudy(String),
    #[error("observer `{observer}` already answered lineup `{lineup}`")]
    DuplicatePick { observer: String, lineup: String },
    #[error("lineup `{lineup}` was not served to observer `{observer}`")]
    NotServed { observer: String, lineup: String },
    #[error("reveal needs a submitted pick for lineup `{0}` from this observer")]
    RevealBeforePick(String),
    #[error("reveal not confirmed")]
    RevealNotConfirmed,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] lineup_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

pub type Result<T> = std::result::Result<T, StudyError>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| StudyError::Io {
            path: path.into(),
            source,
        })
    }
}
