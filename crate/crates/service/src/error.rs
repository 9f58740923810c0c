use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use bridget_core::Error;
use serde::Serialize;
use serde_json::{json, Value};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>, detail: Value) -> Self {
        ApiError { status, code, message: message.into(), detail }
    }

    pub fn session_not_found(id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "session_not_found",
            format!("no session with id `{id}`"),
            json!({ "session_id": id }),
        )
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let message = err.to_string();
        let (status, code, detail) = match &err {
            Error::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input", Value::Null),
            Error::Config { path, .. } => (StatusCode::BAD_REQUEST, "config_error", json!({ "path": path })),
            Error::Protocol { expected, got } => (
                StatusCode::CONFLICT,
                "protocol_error",
                json!({ "expected": expected, "got": got }),
            ),
            Error::Capability(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unsupported", Value::Null),
            Error::Csv { row, .. } => (StatusCode::BAD_REQUEST, "csv_error", json!({ "row": row })),
            Error::CorruptLog { seq, .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log", json!({ "seq": seq }))
            }
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io_error", Value::Null),
            Error::Json(e) => (
                StatusCode::BAD_REQUEST,
                "bad_request",
                json!({ "line": e.line(), "column": e.column() }),
            ),
        };
        ApiError::new(status, code, message, detail)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        ApiError::new(rej.status(), "bad_request", rej.body_text(), Value::Null)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}
