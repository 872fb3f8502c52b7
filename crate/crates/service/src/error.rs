use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;
use thiserror::Error;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                detail: serde_json::Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: serde_json::Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn malformed(e: serde_json::Error) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", "request body is not valid JSON for this endpoint")
            .with_detail(serde_json::json!({"line": e.line(), "column": e.column(), "error": e.to_string()}))
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&self.body).expect("error body serializes");
        (self.status, [("content-type", "application/json")], body).into_response()
    }
}

/// Failures while loading artifacts. The service refuses to start on any
/// of these.
#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("artifact mismatch: {0}")]
    Skew(String),
    #[error("cannot prepare service state: {0}")]
    State(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}
