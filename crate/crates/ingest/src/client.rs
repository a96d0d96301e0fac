//! Recent-search client with pagination, retries and one request in flight per credential.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use tweetkit::RawTweet;

use crate::error::IngestError;
use crate::query::SearchQuery;

pub const TOKEN_ENV: &str = "TWEETKIT_TWITTER_BEARER_TOKEN";
pub const API_URL_ENV: &str = "TWEETKIT_TWITTER_API_URL";
pub const DEFAULT_API_URL: &str = "https://api.twitter.com/2";
pub const SEARCH_PATH: &str = "/tweets/search/recent";

/// Upstream bounds on `max_results` per page.
const MIN_PAGE: usize = 10;
const MAX_PAGE: usize = 100;

#[derive(Clone, PartialEq, Eq)]
pub struct Credentials {
    bearer_token: String,
}

impl Credentials {
    pub fn new(bearer_token: impl Into<String>) -> Self {
        Self {
            bearer_token: bearer_token.into(),
        }
    }

    pub fn from_env() -> Result<Self, IngestError> {
        std::env::var(TOKEN_ENV)
            .ok()
            .filter(|t| !t.trim().is_empty())
            .map(Self::new)
            .ok_or(IngestError::MissingCredentials(TOKEN_ENV))
    }

    pub fn bearer_token(&self) -> &str {
        &self.bearer_token
    }
}

impl fmt::Debug for Credentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credentials(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub params: Vec<(String, String)>,
    pub bearer_token: String,
}

impl HttpRequest {
    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after: Option<Duration>,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            retry_after: None,
            body: body.into(),
        }
    }
}

/// Sends one GET. `Err` is a transport failure (connection refused, timeout, ...).
pub trait Transport: Send + Sync {
    fn get(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("HTTP client"),
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for ReqwestTransport {
    fn get(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let response = self
            .client
            .get(&request.url)
            .query(&request.params)
            .bearer_auth(&request.bearer_token)
            .send()
            .map_err(|e| e.without_url().to_string())?;
        let status = response.status().as_u16();
        let header = |name: &str| {
            response
                .headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<i64>().ok())
        };
        let retry_after = header("retry-after")
            .map(|s| Duration::from_secs(s.max(0) as u64))
            .or_else(|| {
                header("x-rate-limit-reset")
                    .map(|reset| Duration::from_secs((reset - Utc::now().timestamp()).max(1) as u64))
            });
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse {
            status,
            retry_after,
            body,
        })
    }
}

/// Waits between attempts; replaced in tests.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Records requested waits without waiting.
#[derive(Default)]
pub struct NoSleep {
    pub waits: Mutex<Vec<Duration>>,
}

impl Sleeper for NoSleep {
    fn sleep(&self, duration: Duration) {
        self.waits.lock().expect("lock").push(duration);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub base_url: String,
    /// Tweets requested per page; clamped to the upstream range 10..=100.
    pub page_size: usize,
    pub max_pages: usize,
    /// Attempts per page, the first included.
    pub max_attempts: usize,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    /// A 429 asking for a longer wait than this is returned to the caller instead.
    pub max_rate_limit_wait: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_API_URL.into(),
            page_size: MAX_PAGE,
            max_pages: 50,
            max_attempts: 5,
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(32),
            max_rate_limit_wait: Duration::from_secs(60),
        }
    }
}

impl ClientConfig {
    /// Defaults with the base URL taken from the environment when set.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        if let Ok(url) = std::env::var(API_URL_ENV) {
            c.base_url = url;
        }
        c
    }

    fn backoff(&self, retry: usize) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31) as u32).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackoffReason {
    RateLimited,
    Upstream,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackoffEvent {
    pub page: usize,
    pub attempt: usize,
    pub reason: BackoffReason,
    pub wait: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FetchOutcome {
    pub tweets: Vec<RawTweet>,
    pub pages: usize,
    /// True when more matching tweets were available than were returned.
    pub capped: bool,
    pub backoffs: Vec<BackoffEvent>,
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    data: Vec<UpstreamTweet>,
    #[serde(default)]
    meta: Option<Meta>,
}

#[derive(Deserialize)]
struct Meta {
    #[serde(default)]
    next_token: Option<String>,
}

#[derive(Deserialize)]
struct UpstreamTweet {
    id: String,
    text: String,
    created_at: DateTime<Utc>,
    #[serde(default)]
    lang: Option<String>,
}

pub struct SearchClient {
    transport: Arc<dyn Transport>,
    credentials: Credentials,
    config: ClientConfig,
    sleeper: Arc<dyn Sleeper>,
    in_flight: Mutex<()>,
}

impl SearchClient {
    pub fn new(transport: Arc<dyn Transport>, credentials: Credentials, config: ClientConfig) -> Self {
        Self {
            transport,
            credentials,
            config,
            sleeper: Arc::new(ThreadSleeper),
            in_flight: Mutex::new(()),
        }
    }

    /// Real transport, token and base URL from the environment.
    pub fn from_env() -> Result<Self, IngestError> {
        Ok(Self::new(
            Arc::new(ReqwestTransport::default()),
            Credentials::from_env()?,
            ClientConfig::from_env(),
        ))
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Up to `max_results` tweets in the query window, in the order received.
    pub fn fetch_tweets(&self, query: &SearchQuery) -> Result<FetchOutcome, IngestError> {
        query.validate()?;
        let _guard = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = FetchOutcome {
            tweets: Vec::new(),
            pages: 0,
            capped: false,
            backoffs: Vec::new(),
        };
        let mut seen = HashSet::new();
        let mut next: Option<String> = None;
        loop {
            if out.pages == self.config.max_pages {
                out.capped = true;
                break;
            }
            let request = self.page_request(query, next.as_deref());
            let body = self.send_with_retry(&request, out.pages, &mut out.backoffs)?;
            out.pages += 1;
            let page: Page = serde_json::from_str(&body).map_err(|e| IngestError::Upstream {
                message: format!("malformed search response: {e}"),
                raw: Some(body.clone()),
            })?;
            let mut leftover = false;
            for t in page.data {
                if !query.contains(t.created_at) {
                    continue;
                }
                if let Some(lang) = &query.language {
                    if t.lang.as_deref() != Some(lang.as_str()) {
                        continue;
                    }
                }
                if !seen.insert(t.id.clone()) {
                    continue;
                }
                if out.tweets.len() == query.max_results {
                    leftover = true;
                    break;
                }
                out.tweets.push(RawTweet {
                    text: t.text,
                    id: Some(t.id),
                    created_at: Some(t.created_at),
                    lang: t.lang,
                });
            }
            next = page.meta.and_then(|m| m.next_token);
            if leftover || (out.tweets.len() == query.max_results && next.is_some()) {
                out.capped = true;
                break;
            }
            if next.is_none() {
                break;
            }
        }
        Ok(out)
    }

    fn page_request(&self, query: &SearchQuery, next_token: Option<&str>) -> HttpRequest {
        let fmt = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Secs, true);
        let page = self.config.page_size.clamp(MIN_PAGE, MAX_PAGE);
        let mut params = vec![
            ("query".to_string(), query.upstream_query()),
            ("start_time".to_string(), fmt(query.start)),
            ("end_time".to_string(), fmt(query.end)),
            ("max_results".to_string(), page.to_string()),
            ("tweet.fields".to_string(), "created_at,lang".to_string()),
        ];
        if let Some(token) = next_token {
            params.push(("next_token".to_string(), token.to_string()));
        }
        HttpRequest {
            url: format!("{}{SEARCH_PATH}", self.config.base_url.trim_end_matches('/')),
            params,
            bearer_token: self.credentials.bearer_token.clone(),
        }
    }

    fn send_with_retry(
        &self,
        request: &HttpRequest,
        page: usize,
        backoffs: &mut Vec<BackoffEvent>,
    ) -> Result<String, IngestError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            let (reason, wait, err) = match self.transport.get(request) {
                Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(IngestError::Auth(format!("HTTP {}", r.status)));
                }
                Ok(r) if r.status == 429 => {
                    let wait = r.retry_after.unwrap_or_else(|| self.config.backoff(attempt - 1));
                    if wait > self.config.max_rate_limit_wait {
                        return Err(IngestError::RateLimited { retry_after: wait });
                    }
                    (BackoffReason::RateLimited, wait, IngestError::RateLimited { retry_after: wait })
                }
                Ok(r) if r.status >= 500 => (
                    BackoffReason::Upstream,
                    self.config.backoff(attempt - 1),
                    IngestError::Upstream {
                        message: format!("HTTP {}", r.status),
                        raw: Some(r.body),
                    },
                ),
                Ok(r) => {
                    return Err(IngestError::Upstream {
                        message: format!("HTTP {}", r.status),
                        raw: Some(r.body),
                    })
                }
                Err(e) => (
                    BackoffReason::Upstream,
                    self.config.backoff(attempt - 1),
                    IngestError::Upstream {
                        message: e,
                        raw: None,
                    },
                ),
            };
            if attempt == attempts {
                last = Some(err);
                break;
            }
            log::warn!("search page {page} attempt {attempt} failed ({err}); retrying in {wait:?}");
            backoffs.push(BackoffEvent {
                page,
                attempt,
                reason,
                wait,
            });
            self.sleeper.sleep(wait);
        }
        Err(last.expect("at least one attempt"))
    }
}
