use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{message}")]
    Validation { message: String, field_paths: Vec<String> },

    #[error("session {0} not found")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("storage failure: {0}")]
    Storage(String),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn validation(message: impl Into<String>, field_paths: Vec<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            field_paths,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Validation { .. } => "validation_error",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Unsupported(_) => "unsupported",
            ServiceError::Storage(_) => "storage_error",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unsupported(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            field_paths: match self {
                ServiceError::Validation { field_paths, .. } => field_paths.clone(),
                _ => Vec::new(),
            },
        }
    }
}

impl From<btsred::Error> for ServiceError {
    fn from(e: btsred::Error) -> Self {
        match e {
            btsred::Error::Validation(fields) => ServiceError::Validation {
                message: e_message(&fields),
                field_paths: fields.into_iter().map(|f| f.path).collect(),
            },
            btsred::Error::Input(msg) => ServiceError::validation(msg, Vec::new()),
            btsred::Error::Io(err) => ServiceError::Storage(err.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

fn e_message(fields: &[btsred::FieldError]) -> String {
    let parts: Vec<String> = fields.iter().map(|f| format!("{}: {}", f.path, f.message)).collect();
    format!("invalid configuration: {}", parts.join("; "))
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

/// JSON error payload returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub field_paths: Vec<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if matches!(self, ServiceError::Storage(_) | ServiceError::Internal(_)) {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
