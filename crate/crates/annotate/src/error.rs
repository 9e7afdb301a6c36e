use std::path::{Path, PathBuf};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown image {0:?}")]
    NotFound(String),
    #[error("{message}")]
    Validation {
        message: String,
        /// Offending landmark indices, when the problem is positional.
        indices: Vec<usize>,
    },
    #[error("nothing to export: no image has ground truth")]
    NothingToExport,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Core(#[from] facelm::Error),
    #[error("server: {0}")]
    Server(String),
    #[error("worker task failed: {0}")]
    Task(String),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            indices: Vec::new(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Validation { .. } | ServiceError::NothingToExport => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Validation { .. } => "validation",
            ServiceError::NothingToExport => "empty_dataset",
            _ => "internal",
        }
    }
}

/// JSON error body: `{"error": kind, "message": text, "indices": [...]}`.
#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "<[usize]>::is_empty")]
    indices: &'a [usize],
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let indices: &[usize] = match &self {
            ServiceError::Validation { indices, .. } => indices,
            _ => &[],
        };
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
            indices,
        };
        (self.status(), Json(body)).into_response()
    }
}
