use std::net::SocketAddr;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use shiftscope_core::Error as CoreError;

/// Failures that stop the service from starting.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot listen on {addr}: {source}")]
    PortUnavailable {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server stopped: {0}")]
    Server(#[source] std::io::Error),
    #[error(transparent)]
    Store(#[from] CoreError),
}

/// A structured error response.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    error: Detail<'a>,
}

#[derive(Serialize)]
struct Detail<'a> {
    status: u16,
    kind: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: message.into(),
        }
    }

    pub fn missing_artifact(what: &str) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            kind: "missing_artifact",
            message: format!("missing artifact: {what}"),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, kind) = match &e {
            CoreError::UnknownInstance(_) | CoreError::UnknownSpace(_) | CoreError::UnknownCluster(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            CoreError::MissingArtifact(_) | CoreError::MissingModel | CoreError::ScoreCoverageGap(_) => {
                (StatusCode::CONFLICT, "missing_artifact")
            }
            CoreError::InvalidConfig(_) | CoreError::DimensionMismatch { .. } => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: Detail {
                status: self.status.as_u16(),
                kind: self.kind,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}
