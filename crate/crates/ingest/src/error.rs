use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid search query: {0}")]
    InvalidQuery(String),

    #[error("no bearer token configured (set {0})")]
    MissingCredentials(&'static str),

    #[error("upstream rejected the credentials: {0}")]
    Auth(String),

    #[error("rate limited; retry after {}s", retry_after.as_secs())]
    RateLimited { retry_after: Duration },

    /// `raw` keeps the offending payload for debugging.
    #[error("upstream error: {message}")]
    Upstream { message: String, raw: Option<String> },
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::RateLimited { .. } | IngestError::Upstream { .. })
    }
}
