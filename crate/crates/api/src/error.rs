use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mbd_core::aggregation::AggregationError;
use mbd_core::review::ReviewError;
use mbd_core::StoreError;
use serde::{Deserialize, Serialize};

/// Every machine code the service can return, with its HTTP status.
pub const ERROR_CODES: &[(&str, u16)] = &[
    ("invalid_parameter", 400),
    ("invalid_body", 400),
    ("invalid_override", 400),
    ("unauthorized", 401),
    ("review_disabled", 403),
    ("not_found", 404),
    ("unknown_node", 404),
    ("unknown_version", 404),
    ("unknown_event", 404),
    ("unknown_fact", 404),
    ("unknown_task", 404),
    ("task_resolved", 409),
    ("missing_annotation", 409),
    ("store_unavailable", 503),
    ("internal", 500),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub error: ErrorBody,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let status = ERROR_CODES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, s)| StatusCode::from_u16(*s).expect("valid status"))
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_param(message: impl Into<String>) -> Self {
        Self::new("invalid_parameter", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorDoc {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidSelector(m) => Self::bad_param(m),
            StoreError::IntegrityViolation(m) => Self::new("internal", m),
            other => Self::new("store_unavailable", other.to_string()),
        }
    }
}

impl From<AggregationError> for ApiError {
    fn from(e: AggregationError) -> Self {
        match e {
            AggregationError::InvalidFilter(m) => Self::bad_param(m),
            AggregationError::UnknownNode(n) => Self::new("unknown_node", format!("unknown node `{n}`")),
            AggregationError::Store(s) => s.into(),
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let msg = e.to_string();
        match e {
            ReviewError::UnknownTask(_) => Self::new("unknown_task", msg),
            ReviewError::TaskAlreadyResolved(_) => Self::new("task_resolved", msg),
            ReviewError::InvalidOverrideLabel(_) => Self::new("invalid_override", msg),
            ReviewError::MissingAnnotation(_) => Self::new("missing_annotation", msg),
            ReviewError::InvalidWeek(_) | ReviewError::InvalidSampleSize | ReviewError::EmptyPeriod => {
                Self::bad_param(msg)
            }
            ReviewError::Store(s) => s.into(),
            _ => Self::new("internal", msg),
        }
    }
}
