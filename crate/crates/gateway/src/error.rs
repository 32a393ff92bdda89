use asafeplace_core::personalize::PersonalizeError;
use asafeplace_core::session::{Phase, SessionError};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0}")]
    Config(String),
    #[error("unauthorized")]
    Unauthorized,
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("{message}")]
    Conflict { message: String, phase: Phase },
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("asset generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Session(SessionError),
    #[error(transparent)]
    Personalize(#[from] PersonalizeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// Maps an engine error raised while the session was in `phase`.
    pub fn from_session(e: SessionError, phase: Phase) -> Self {
        match e {
            SessionError::IllegalTransition { .. } | SessionError::Rejected(_) => Self::Conflict {
                message: e.to_string(),
                phase,
            },
            SessionError::Refused(_) => Self::Unprocessable(e.to_string()),
            SessionError::Config(_) | SessionError::Frame(_) | SessionError::Signal(_) => {
                Self::BadRequest(e.to_string())
            }
            SessionError::NotFound(id) => Self::NotFound(id),
            other => Self::Session(other),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict { .. } => StatusCode::CONFLICT,
            Self::BadRequest(_) | Self::Config(_) => StatusCode::BAD_REQUEST,
            Self::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Generation(_) => StatusCode::BAD_GATEWAY,
            Self::Session(SessionError::Empty) => StatusCode::NOT_FOUND,
            Self::Session(SessionError::Invalid { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Personalize(_) => StatusCode::BAD_REQUEST,
            Self::Session(_) | Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SessionError> for GatewayError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(id) => Self::NotFound(id),
            SessionError::Config(m) => Self::BadRequest(m),
            other => Self::Session(other),
        }
    }
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = match &self {
            Self::Conflict { message, phase } => json!({ "error": message, "phase": phase }),
            other => json!({ "error": other.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}
