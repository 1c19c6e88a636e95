use annoqual_core::{MmError, StoreError};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("triage has not been computed yet; POST /api/recompute first")]
    TriageNotComputed,
    #[error("no sample matrices found in {0}")]
    MissingSamples(String),
    #[error("hint source `mm` requested but {0} does not exist")]
    MissingEnsemble(String),
    #[error("sample matrix does not match the dataset: {0}")]
    InvalidSamples(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("ensemble fit failed: {0}")]
    Ensemble(#[from] MmError),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl ServiceError {
    /// Stable machine-readable error name.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::TriageNotComputed => "TriageNotComputed",
            ServiceError::MissingSamples(_) => "MissingSamples",
            ServiceError::MissingEnsemble(_) => "MissingEnsemble",
            ServiceError::InvalidSamples(_) => "InvalidSamples",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Store(e) => match e {
                StoreError::UnknownInstance(_) => "UnknownInstance",
                StoreError::InvalidLabel { .. } => "InvalidLabel",
                StoreError::InvalidProbabilities { .. } => "InvalidProbabilities",
                StoreError::InvalidEvent(_) => "InvalidEvent",
                StoreError::DuplicateEvent { .. } => "DuplicateEvent",
                _ => "StoreFailure",
            },
            ServiceError::Ensemble(_) => "EnsembleFitFailed",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::TriageNotComputed
            | ServiceError::MissingSamples(_)
            | ServiceError::MissingEnsemble(_)
            | ServiceError::InvalidSamples(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Store(e) => match e {
                StoreError::UnknownInstance(_) => StatusCode::NOT_FOUND,
                StoreError::InvalidLabel { .. } | StoreError::InvalidProbabilities { .. } | StoreError::InvalidEvent(_) => {
                    StatusCode::UNPROCESSABLE_ENTITY
                }
                StoreError::DuplicateEvent { .. } => StatusCode::CONFLICT,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            ServiceError::Ensemble(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}
