use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cotalk_core::chain::ChainError;
use cotalk_core::gateway::GatewayError;
use cotalk_core::store::StoreError;
use serde::{Deserialize, Serialize};

/// Body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id:?} does not exist"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody { code: self.code.to_string(), message: self.message };
        (self.status, Json(body)).into_response()
    }
}

impl From<ChainError> for ApiError {
    fn from(e: ChainError) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            ChainError::OutOfOrderRound { .. } => (StatusCode::CONFLICT, "out_of_order_round"),
            ChainError::SessionClosed => (StatusCode::CONFLICT, "session_closed"),
            ChainError::RoundLimitReached { .. } => (StatusCode::CONFLICT, "round_limit_reached"),
            ChainError::MergePending => (StatusCode::CONFLICT, "merge_pending"),
            ChainError::IncompleteParallelSession { .. } => (StatusCode::CONFLICT, "incomplete_parallel_session"),
            ChainError::NothingToRead => (StatusCode::CONFLICT, "nothing_to_read"),
            ChainError::NothingToFinalize => (StatusCode::CONFLICT, "nothing_to_finalize"),
            ChainError::SessionNotFinalized => (StatusCode::CONFLICT, "session_not_finalized"),
            ChainError::InvalidMode(_) => (StatusCode::BAD_REQUEST, "invalid_mode"),
            ChainError::InvalidTiming(_) => (StatusCode::BAD_REQUEST, "invalid_timing"),
            ChainError::GatewayFailure(_) => (StatusCode::BAD_GATEWAY, "gateway_failure"),
            ChainError::LedgerIncomplete { .. } | ChainError::CorruptEvent(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_session")
            }
        };
        ApiError::new(status, code, message)
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::UnsupportedFormat(_) | GatewayError::EmptyCaption => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_audio", e.to_string())
            }
            _ => ApiError::new(StatusCode::BAD_GATEWAY, "gateway_failure", e.to_string()),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::BlobNotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::InvalidBlobKey(_) => ApiError::bad_request(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}
