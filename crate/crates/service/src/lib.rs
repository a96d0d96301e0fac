//! HTTP/JSON front end for tweetkit.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/classify/{task}` | `{text, language?, target?, top_k?}` |
//! | POST | `/ner` | `{text, language?}` |
//! | POST | `/mask` | `{text, k?}` |
//! | POST | `/similarity` | `{text_a, text_b}` |
//! | POST | `/hashtag-analysis` | `{query, start, end, task, language?, target?, bucket_width?, max_results?}` |
//! | GET | `/tasks` | |
//! | GET | `/healthz` | |
//!
//! JSON Schemas for every body live in `schemas/`.

pub mod api;
pub mod demo;
pub mod error;
pub mod pool;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::extract::rejection::JsonRejection;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::TimeDelta;
use serde::de::DeserializeOwned;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use tweetkit::classification::{predict_any, predict_batch_with_target, stance_revision};
use tweetkit::embeddings::{tweet_similarity, TweetEncoder};
use tweetkit::masked_lm::predict_mask;
use tweetkit::ner::extract_entities;
use tweetkit::preprocessing::normalize_text;
use tweetkit::registry::{LanguageScope, ProblemType, TaskSpec};
use tweetkit::{ModelHandle, Registry};
use tweetkit_ingest::{aggregate_over_time, default_bucket_width, SearchClient, SearchQuery, TimeBucketedAggregate};

use api::*;
use error::ApiError;
use pool::ModelPool;

pub const SCHEMA_VERSION: &str = "1.0";
pub const MASK_TASK: &str = "language_model";
pub const EMBEDDING_TASK: &str = "sentence_embedding";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub pool_size: NonZeroUsize,
    pub body_limit: usize,
    pub hashtag_timeout: Duration,
    pub default_max_results: usize,
    pub max_results_limit: usize,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            pool_size: NonZeroUsize::new(8).expect("non-zero"),
            body_limit: 16 * 1024,
            hashtag_timeout: Duration::from_secs(60),
            default_max_results: 500,
            max_results_limit: 5000,
            cors_origin: None,
        }
    }
}

pub struct AppState {
    pub pool: ModelPool,
    pub ingest: Option<Arc<SearchClient>>,
    pub config: ServiceConfig,
}

impl AppState {
    pub fn new(registry: Arc<Registry>, ingest: Option<Arc<SearchClient>>, config: ServiceConfig) -> Self {
        Self {
            pool: ModelPool::new(registry, config.pool_size),
            ingest,
            config,
        }
    }

    fn registry(&self) -> &Registry {
        self.pool.registry()
    }
}

type Shared = State<Arc<AppState>>;

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any)
        .allow_origin(match &state.config.cors_origin {
            Some(o) => match HeaderValue::from_str(o) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => AllowOrigin::any(),
            },
            None => AllowOrigin::any(),
        });
    let limit = state.config.body_limit;
    Router::new()
        .route("/classify/{task}", post(classify))
        .route("/ner", post(ner))
        .route("/mask", post(mask))
        .route("/similarity", post(similarity))
        .route("/hashtag-analysis", post(hashtag_analysis))
        .route("/tasks", get(tasks))
        .route("/healthz", get(healthz))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(Arc::new(state))
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// JSON body whose rejections use the service error format.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(JsonRejection::BytesRejection(e)) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => Err(
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", e.body_text()),
            ),
            Err(JsonRejection::MissingJsonContentType(e)) => Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "unsupported_media_type",
                e.body_text(),
            )),
            Err(e) => Err(ApiError::invalid_body(e.body_text())),
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

/// A listed single- or multi-label task.
fn classification_spec(registry: &Registry, task: &str) -> Result<TaskSpec, ApiError> {
    let spec = registry
        .list_tasks()
        .into_iter()
        .find(|t| t.name == task)
        .ok_or_else(|| ApiError::from(tweetkit::Error::UnknownTask(task.to_string())))?;
    if !matches!(spec.problem_type, ProblemType::SingleLabel | ProblemType::MultiLabel) {
        return Err(ApiError::bad_request(
            "wrong_problem_type",
            format!("task `{task}` is not a classification task"),
        ));
    }
    Ok(spec.clone())
}

fn check_target(spec: &TaskSpec, target: &Option<String>) -> Result<(), ApiError> {
    match (spec.needs_target, target) {
        (true, None) => Err(ApiError::invalid_body(format!("task `{}` requires field `target`", spec.name))),
        (false, Some(_)) => Err(ApiError::invalid_body(format!("task `{}` does not take a `target`", spec.name))),
        _ => Ok(()),
    }
}

fn revision_for(handle: &ModelHandle, target: Option<&str>) -> Result<String, ApiError> {
    Ok(match target {
        Some(t) => stance_revision(handle, t)?.to_string(),
        None => handle.revision().to_string(),
    })
}

async fn classify(
    State(s): Shared,
    Path(task): Path<String>,
    ApiJson(req): ApiJson<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, ApiError> {
    let spec = classification_spec(s.registry(), &task)?;
    check_target(&spec, &req.target)?;
    if let Some(k) = req.top_k {
        if k == 0 {
            return Err(ApiError::bad_request("invalid_request", "top_k must be at least 1"));
        }
        if k > spec.labels.len() {
            return Err(tweetkit::Error::KTooLarge {
                k,
                available: spec.labels.len(),
            }
            .into());
        }
    }
    let handle = s.pool.get(&task, req.language.as_deref()).await?;
    blocking(move || {
        let prediction = predict_any(&handle, &req.text, req.target.as_deref())?;
        let model_revision = revision_for(&handle, req.target.as_deref())?;
        let top_k = req.top_k.map(|k| {
            let mut ranked: Vec<RankedLabel> = prediction
                .distribution
                .iter()
                .map(|(label, &probability)| RankedLabel {
                    label: label.clone(),
                    probability,
                })
                .collect();
            ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability));
            ranked.truncate(k);
            ranked
        });
        Ok(Json(ClassifyResponse {
            schema_version: SCHEMA_VERSION.into(),
            task,
            prediction,
            top_k,
            target: req.target,
            model_revision,
        }))
    })
    .await
}

async fn ner(State(s): Shared, ApiJson(req): ApiJson<NerRequest>) -> Result<Json<NerResponse>, ApiError> {
    let handle = s.pool.get("ner", req.language.as_deref()).await?;
    blocking(move || {
        Ok(Json(NerResponse {
            schema_version: SCHEMA_VERSION.into(),
            entities: extract_entities(&handle, &req.text)?,
            model_revision: handle.revision().to_string(),
        }))
    })
    .await
}

async fn mask(State(s): Shared, ApiJson(req): ApiJson<MaskRequest>) -> Result<Json<MaskResponse>, ApiError> {
    let handle = s.pool.get(MASK_TASK, None).await?;
    blocking(move || {
        Ok(Json(MaskResponse {
            schema_version: SCHEMA_VERSION.into(),
            masks: predict_mask(&handle, &req.text, req.k.unwrap_or(DEFAULT_MASK_K))?,
            model_revision: handle.revision().to_string(),
        }))
    })
    .await
}

async fn similarity(
    State(s): Shared,
    ApiJson(req): ApiJson<SimilarityRequest>,
) -> Result<Json<SimilarityResponse>, ApiError> {
    let handle = s.pool.get(EMBEDDING_TASK, None).await?;
    blocking(move || {
        let encoder = TweetEncoder::from_handle(&handle)?;
        Ok(Json(SimilarityResponse {
            schema_version: SCHEMA_VERSION.into(),
            score: tweet_similarity(&encoder, &req.text_a, &req.text_b)?,
            model_revision: handle.revision().to_string(),
        }))
    })
    .await
}

async fn hashtag_analysis(
    State(s): Shared,
    ApiJson(req): ApiJson<HashtagRequest>,
) -> Result<Json<HashtagResponse>, ApiError> {
    if req.start >= req.end {
        return Err(ApiError::bad_request("invalid_window", "start must be before end"));
    }
    let width = match req.bucket_width {
        Some(w) if w > 0 => TimeDelta::seconds(w),
        Some(w) => return Err(ApiError::bad_request("invalid_request", format!("bucket_width {w} is not positive"))),
        None => default_bucket_width(),
    };
    let max_results = req.max_results.unwrap_or(s.config.default_max_results);
    if max_results == 0 || max_results > s.config.max_results_limit {
        return Err(ApiError::bad_request(
            "invalid_request",
            format!("max_results must be in 1..={}", s.config.max_results_limit),
        ));
    }
    let spec = classification_spec(s.registry(), &req.task)?;
    check_target(&spec, &req.target)?;
    let query = SearchQuery::new(&req.query, req.start, req.end, req.language.clone(), max_results)?;
    let client = s.ingest.clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "ingest_unavailable", "no tweet search credentials configured")
    })?;
    let handle = s.pool.get(&req.task, req.language.as_deref()).await?;
    let work = blocking(move || {
        let fetched = client.fetch_tweets(&query)?;
        let (kept, skipped): (Vec<_>, Vec<_>) = fetched
            .tweets
            .into_iter()
            .partition(|t| normalize_text(&t.text).is_ok());
        let texts: Vec<&str> = kept.iter().map(|t| t.text.as_str()).collect();
        let aggregate = if texts.is_empty() {
            TimeBucketedAggregate {
                bucket_width_seconds: width.num_seconds(),
                buckets: Vec::new(),
            }
        } else {
            let predictions = predict_batch_with_target(&handle, &texts, req.target.as_deref())?;
            aggregate_over_time(&kept, &predictions, width)?
        };
        Ok(Json(HashtagResponse {
            schema_version: SCHEMA_VERSION.into(),
            query: req.query,
            task: req.task,
            aggregate,
            tweets_analyzed: kept.len(),
            tweets_skipped: skipped.len(),
            max_results,
            capped: fetched.capped,
            model_revision: revision_for(&handle, req.target.as_deref())?,
        }))
    });
    match tokio::time::timeout(s.config.hashtag_timeout, work).await {
        Ok(r) => r,
        Err(_) => Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "timeout",
            format!("analysis exceeded {:?}", s.config.hashtag_timeout),
        )),
    }
}

async fn tasks(State(s): Shared) -> Json<TasksResponse> {
    let registry = s.registry();
    let targets: Vec<String> = registry.stance_targets().into_keys().collect();
    let tasks = registry
        .list_tasks()
        .into_iter()
        .map(|t| {
            let languages: BTreeSet<String> = registry
                .cards()
                .iter()
                .filter(|c| c.task == t.name)
                .filter_map(|c| match &c.language_scope {
                    LanguageScope::Multilingual(codes) => Some(codes.clone()),
                    LanguageScope::English => None,
                })
                .flatten()
                .collect();
            TaskSummary {
                name: t.name.clone(),
                problem_type: t.problem_type,
                labels: t.labels.clone(),
                metric: t.metric.abbreviation().to_string(),
                needs_target: t.needs_target,
                targets: if t.needs_target { targets.clone() } else { Vec::new() },
                languages: languages.into_iter().collect(),
            }
        })
        .collect();
    Json(TasksResponse {
        schema_version: SCHEMA_VERSION.into(),
        tasks,
    })
}

async fn healthz(State(s): Shared) -> Json<HealthResponse> {
    let mut loaded = s.pool.loaded();
    loaded.sort();
    Json(HealthResponse {
        schema_version: SCHEMA_VERSION.into(),
        status: "ok".into(),
        loaded_models: loaded,
    })
}
