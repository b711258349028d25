use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use polescan_core::api::{codes, ErrorBody};
use polescan_core::experiments::ExperimentError;
use polescan_core::tracker::TrackerError;
use serde_json::{json, Value};

/// An error rendered as `{code, message, detail}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, codes::BAD_REQUEST, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<TrackerError> for ApiError {
    fn from(e: TrackerError) -> Self {
        let message = e.to_string();
        let (status, code, detail) = match &e {
            TrackerError::UnreadableBlob { uri, reason } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                codes::UNREADABLE_BLOB,
                json!({"uri": uri, "reason": reason}),
            ),
            TrackerError::Duplicate { existing } => {
                (StatusCode::CONFLICT, codes::DUPLICATE_CONTENT, json!({"existing": existing}))
            }
            TrackerError::IllegalState {
                image_id,
                state,
                attempted,
            } => (
                StatusCode::CONFLICT,
                codes::ILLEGAL_STATE,
                json!({"image_id": image_id, "state": state, "attempted": attempted}),
            ),
            TrackerError::VersionConflict {
                image_id,
                expected,
                actual,
            } => (
                StatusCode::CONFLICT,
                codes::VERSION_CONFLICT,
                json!({"image_id": image_id, "expected": expected, "actual": actual}),
            ),
            TrackerError::DuplicateDecision { image_id } => {
                (StatusCode::CONFLICT, codes::DUPLICATE_DECISION, json!({"image_id": image_id}))
            }
            TrackerError::EmptyBatch => (StatusCode::BAD_REQUEST, codes::EMPTY_BATCH, Value::Null),
            TrackerError::UnknownImage(id) => (StatusCode::NOT_FOUND, codes::UNKNOWN_IMAGE, json!({"image_id": id})),
            TrackerError::InvalidAnnotations(report) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                codes::INVALID_ANNOTATIONS,
                serde_json::to_value(report).unwrap_or(Value::Null),
            ),
            TrackerError::BadPolicy(_) => (StatusCode::BAD_REQUEST, codes::BAD_POLICY, Value::Null),
            TrackerError::CorruptLog { file, line, .. } => (
                StatusCode::INTERNAL_SERVER_ERROR,
                codes::CORRUPT_LOG,
                json!({"file": file, "line": line}),
            ),
            TrackerError::Io { path, .. } => (StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, json!({"path": path})),
        };
        Self {
            status,
            code,
            message,
            detail,
        }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::UnknownBaseline(name) => {
                Self::new(StatusCode::NOT_FOUND, codes::UNKNOWN_EXPERIMENT, format!("unknown experiment {name}"))
                    .with_detail(json!({"name": name}))
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), codes::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}
