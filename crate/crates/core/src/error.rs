use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible phantom geometry: {0}")]
    Geometry(String),

    #[error("too few patients: {0}")]
    TooFewPatients(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: u64, detail: String },

    #[error("model/fold mismatch: {0}")]
    Leakage(String),

    #[error("incomplete grid: {missing} missing cell(s)\n{report}")]
    Incomplete { missing: usize, report: String },

    #[error("refusing to write into non-empty {0} (pass --overwrite)")]
    NotEmpty(PathBuf),

    #[error("existing state does not match configuration: {0}")]
    StateMismatch(String),

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
