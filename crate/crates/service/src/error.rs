use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use crate::session::SessionState;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("strategy body is empty")]
    EmptyBody,
    #[error("strategy has no numbered or bulleted steps")]
    NoSteps,
    #[error("research prompt is empty")]
    EmptyPrompt,
    #[error("session is {}, but this needs {}", .actual.as_str(), .needed)]
    InvalidState {
        actual: SessionState,
        needed: &'static str,
    },
    #[error("no research results were processed before the session stopped")]
    InsufficientContext,
    #[error("{0}")]
    ContextTooLarge(String),
    #[error("script not available: {0}")]
    NoScript(String),
    #[error("language model failed: {0}")]
    Backend(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownStrategy(_) => "UNKNOWN_STRATEGY",
            ApiError::UnknownSession(_) => "UNKNOWN_SESSION",
            ApiError::EmptyBody => "EMPTY_BODY",
            ApiError::NoSteps => "NO_STEPS_FOUND",
            ApiError::EmptyPrompt => "EMPTY_PROMPT",
            ApiError::InvalidState { .. } => "INVALID_STATE",
            ApiError::InsufficientContext => "INSUFFICIENT_CONTEXT",
            ApiError::ContextTooLarge(_) => "CONTEXT_TOO_LARGE",
            ApiError::NoScript(_) => "NO_SCRIPT",
            ApiError::Backend(_) => "BACKEND_ERROR",
            ApiError::Storage(_) => "STORAGE_ERROR",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownStrategy(_) | ApiError::UnknownSession(_) | ApiError::NoScript(_) => {
                StatusCode::NOT_FOUND
            }
            ApiError::EmptyBody | ApiError::NoSteps | ApiError::EmptyPrompt => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::InvalidState { .. }
            | ApiError::InsufficientContext
            | ApiError::ContextTooLarge(_) => StatusCode::CONFLICT,
            ApiError::Backend(_) => StatusCode::BAD_GATEWAY,
            ApiError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
