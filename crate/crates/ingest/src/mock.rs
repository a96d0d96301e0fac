//! Deterministic in-process stand-in for the search endpoint.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde_json::json;

use tweetkit::RawTweet;

use crate::client::{HttpRequest, HttpResponse, Transport};

/// Serves a fixed corpus with the upstream paging scheme.
///
/// A tweet matches when its text contains every plain query term
/// (case-insensitive) and its language equals any `lang:` operator.
/// `next_token` is the offset into the filtered corpus.
#[derive(Default)]
pub struct MockUpstream {
    corpus: Vec<RawTweet>,
    scripted: Mutex<VecDeque<Result<HttpResponse, String>>>,
    log: Mutex<Vec<HttpRequest>>,
    /// Emit this many already-served tweets again at the head of every later page.
    pub overlap: usize,
}

impl MockUpstream {
    pub fn new(corpus: Vec<RawTweet>) -> Self {
        Self {
            corpus,
            ..Self::default()
        }
    }

    /// Queues a response returned before any normal page is served.
    pub fn then(self, response: Result<HttpResponse, String>) -> Self {
        self.scripted.lock().expect("lock").push_back(response);
        self
    }

    pub fn then_status(self, status: u16, retry_after: Option<Duration>) -> Self {
        self.then(Ok(HttpResponse {
            status,
            retry_after,
            body: json!({"title": "scripted failure"}).to_string(),
        }))
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().expect("lock").clone()
    }

    fn matching(&self, request: &HttpRequest) -> Vec<&RawTweet> {
        let query = request.param("query").unwrap_or("");
        let time = |name: &str| {
            request
                .param(name)
                .and_then(|v| DateTime::parse_from_rfc3339(v).ok())
                .map(|t| t.with_timezone(&Utc))
        };
        let (start, end) = (time("start_time"), time("end_time"));
        let mut lang = None;
        let mut terms = Vec::new();
        for word in query.split_whitespace() {
            match word.strip_prefix("lang:") {
                Some(l) => lang = Some(l),
                None => terms.push(word.to_lowercase()),
            }
        }
        self.corpus
            .iter()
            .filter(|t| {
                let text = t.text.to_lowercase();
                let in_window = t
                    .created_at
                    .is_some_and(|c| start.is_none_or(|s| s <= c) && end.is_none_or(|e| c < e));
                in_window
                    && terms.iter().all(|w| text.contains(w.as_str()))
                    && lang.is_none_or(|l| t.lang.as_deref() == Some(l))
            })
            .collect()
    }
}

impl Transport for MockUpstream {
    fn get(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        self.log.lock().expect("lock").push(request.clone());
        if let Some(r) = self.scripted.lock().expect("lock").pop_front() {
            return r;
        }
        let hits = self.matching(request);
        let offset: usize = request.param("next_token").and_then(|t| t.parse().ok()).unwrap_or(0);
        let size: usize = request.param("max_results").and_then(|m| m.parse().ok()).unwrap_or(10);
        let end = (offset + size).min(hits.len());
        let from = if offset > 0 { offset.saturating_sub(self.overlap) } else { 0 };
        let data: Vec<_> = hits[from.min(end)..end]
            .iter()
            .map(|t| {
                json!({
                    "id": t.id,
                    "text": t.text,
                    "created_at": t.created_at.map(|c| c.to_rfc3339()),
                    "lang": t.lang,
                    "edit_history_tweet_ids": [t.id],
                })
            })
            .collect();
        let mut meta = json!({"result_count": data.len()});
        if end < hits.len() {
            meta["next_token"] = json!(end.to_string());
        }
        let body = if data.is_empty() {
            json!({"meta": meta})
        } else {
            json!({"data": data, "meta": meta})
        };
        Ok(HttpResponse::ok(body.to_string()))
    }
}
