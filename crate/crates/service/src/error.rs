use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Error returned to clients as `{"error": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn bad_request(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            field: Some(field.into()),
            ..ApiError::new(StatusCode::BAD_REQUEST, "invalid-request", message)
        }
    }

    pub fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no trial `{id}`"))
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, code, message)
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn storage(e: std::io::Error) -> Self {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "storage",
            format!("event log write failed: {e}"),
        )
    }

    /// Design validation failure, naming the offending part of the design.
    pub fn invalid_design(e: escalate_core::Error) -> Self {
        use escalate_core::Error::*;
        let field = match &e {
            InvalidSkeleton(_) => "design.skeleton",
            InvalidModel(_) => "design.model",
            InvalidTarget(_) => "design.target",
            InvalidCriterion(_) => "design.criterion",
            InvalidGrid(_) => "design.grid",
            _ => "design",
        };
        ApiError::bad_request(field, e.to_string())
    }

    pub fn from_engine(e: escalate_core::Error) -> Self {
        use escalate_core::Error::*;
        match e {
            TrialComplete => ApiError::conflict("trial-complete", e.to_string()),
            CapacityExceeded { .. } => ApiError::conflict("capacity-exceeded", e.to_string()),
            Inadmissible { .. } => ApiError::unprocessable("inadmissible-dose", e.to_string()),
            Domain(_) | InvalidDesign(_) => ApiError::unprocessable("invalid-cohort", e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine", other.to_string()),
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a ApiError,
        }
        (self.status, Json(Body { error: &self })).into_response()
    }
}
