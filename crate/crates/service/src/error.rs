use std::time::Duration;

use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use tweetkit::Error;
use tweetkit_ingest::IngestError;

use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: String,
    pub error: ErrorDetail,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_seconds: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub retry_after: Option<Duration>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            retry_after: None,
        }
    }

    pub fn invalid_body(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", message)
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    /// Failure while resolving or opening a model.
    pub fn from_load(e: Error) -> Self {
        match e {
            Error::UnknownTask(_) | Error::UnsupportedLanguage { .. } => e.into(),
            other => Self::new(StatusCode::SERVICE_UNAVAILABLE, "model_unavailable", other.to_string()),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use StatusCode as S;
        let e = match e {
            Error::BatchItem { source, .. } => *source,
            other => other,
        };
        let (status, code) = match &e {
            Error::UnknownTask(_) => (S::NOT_FOUND, "unknown_task"),
            Error::UnsupportedLanguage { .. } => (S::BAD_REQUEST, "unsupported_language"),
            Error::UnknownTarget(_) => (S::BAD_REQUEST, "unknown_target"),
            Error::EmptyInput => (S::BAD_REQUEST, "empty_input"),
            Error::NoMaskPresent(_) => (S::BAD_REQUEST, "no_mask_present"),
            Error::KTooLarge { .. } => (S::BAD_REQUEST, "k_too_large"),
            Error::WrongProblemType { .. } => (S::BAD_REQUEST, "wrong_problem_type"),
            Error::Precondition(_) => (S::BAD_REQUEST, "invalid_request"),
            Error::ModelFetch { .. } | Error::IncompatibleHead { .. } => (S::SERVICE_UNAVAILABLE, "model_unavailable"),
            _ => (S::INTERNAL_SERVER_ERROR, "internal_error"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        use StatusCode as S;
        match e {
            IngestError::InvalidQuery(m) => Self::bad_request("invalid_query", m),
            IngestError::MissingCredentials(_) => {
                Self::new(S::SERVICE_UNAVAILABLE, "ingest_unavailable", e.to_string())
            }
            IngestError::Auth(_) => Self::new(S::BAD_GATEWAY, "upstream_auth", e.to_string()),
            IngestError::RateLimited { retry_after } => Self {
                retry_after: Some(retry_after),
                ..Self::new(S::TOO_MANY_REQUESTS, "rate_limited", e.to_string())
            },
            IngestError::Upstream { .. } => Self::new(S::BAD_GATEWAY, "upstream_error", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{} {}: {}", self.status, self.code, self.message);
        }
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION.into(),
            error: ErrorDetail {
                code: self.code.into(),
                message: self.message,
            },
            retry_after_seconds: self.retry_after.map(|d| d.as_secs()),
        };
        let mut response = (self.status, Json(body)).into_response();
        if let Some(d) = self.retry_after {
            if let Ok(v) = HeaderValue::from_str(&d.as_secs().to_string()) {
                response.headers_mut().insert(header::RETRY_AFTER, v);
            }
        }
        response
    }
}
