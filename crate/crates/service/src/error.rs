use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service is not initialized with a corpus, classifier and policy")]
    NotInitialized,

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown item {0}")]
    UnknownItem(u64),

    #[error("session is {actual}, expected {expected}")]
    WrongStatus {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("session is finished")]
    Finished,

    #[error("{0}")]
    Validation(String),

    #[error("answer does not fit the pending {0} action")]
    TypeMismatch(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] hdialog::Error),
}

/// Wire form of every error response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotInitialized => "not_initialized",
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownItem(_) => "unknown_item",
            ServiceError::WrongStatus { .. } => "invalid_status",
            ServiceError::Finished => "session_finished",
            ServiceError::Validation(_) => "validation",
            ServiceError::TypeMismatch(_) => "type_mismatch",
            ServiceError::Checkpoint(_) => "checkpoint",
            ServiceError::Core(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotInitialized => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::UnknownSession(_) | ServiceError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ServiceError::WrongStatus { .. } | ServiceError::Finished => StatusCode::CONFLICT,
            ServiceError::Validation(_) | ServiceError::TypeMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Checkpoint(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
