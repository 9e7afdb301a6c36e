use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("insufficient subjects: {0}")]
    InsufficientSubjects(String),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("image {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid statistical input: {0}")]
    InvalidInput(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("image {image}: {source}")]
    Image {
        image: String,
        #[source]
        source: Box<Error>,
    },
    #[error("grid permutation {index}: {source}")]
    Permutation {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
