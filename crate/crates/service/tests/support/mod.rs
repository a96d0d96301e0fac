//! Contract cases shared by the service tests and the workspace acceptance run.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tweetkit::classification::predict_any;
use tweetkit::embeddings::{tweet_similarity, TweetEncoder};
use tweetkit::masked_lm::predict_mask;
use tweetkit::ner::extract_entities;
use tweetkit::registry::builtin_tasks;
use tweetkit::stub::StubStore;
use tweetkit::{ModelCard, Registry};
use tweetkit_ingest::client::{HttpRequest, HttpResponse, Transport};
use tweetkit_ingest::{ClientConfig, Credentials, SearchClient};
use tweetkit_service::demo::{demo_registry, demo_search_client, demo_upstream};
use tweetkit_service::{router, AppState, ServiceConfig};

pub fn state_with(ingest: Option<SearchClient>, config: ServiceConfig) -> AppState {
    AppState::new(Arc::new(demo_registry()), ingest.map(Arc::new), config)
}

pub fn demo_app() -> Router {
    router(state_with(Some(demo_search_client(demo_upstream())), ServiceConfig::default()))
}

pub fn no_ingest_app() -> Router {
    router(state_with(None, ServiceConfig::default()))
}

pub fn scripted_upstream_app(status: u16, retry_after: Option<Duration>) -> Router {
    let upstream = demo_upstream().then_status(status, retry_after);
    router(state_with(Some(demo_search_client(upstream)), ServiceConfig::default()))
}

pub fn broken_model_app() -> Router {
    let emotion = builtin_tasks().into_iter().find(|t| t.name == "emotion").unwrap();
    let mut registry = Registry::new(Arc::new(StubStore::new()));
    registry
        .register_card(ModelCard::new(&emotion, "stub:not-registered", "r1"))
        .unwrap();
    router(AppState::new(Arc::new(registry), None, ServiceConfig::default()))
}

pub struct SlowTransport;

impl Transport for SlowTransport {
    fn get(&self, _request: &HttpRequest) -> Result<HttpResponse, String> {
        std::thread::sleep(Duration::from_millis(500));
        Ok(HttpResponse::ok(json!({"meta": {"result_count": 0}}).to_string()))
    }
}

pub fn slow_upstream_app() -> Router {
    let client = SearchClient::new(Arc::new(SlowTransport), Credentials::new("t"), ClientConfig::default());
    let config = ServiceConfig {
        hashtag_timeout: Duration::from_millis(50),
        ..ServiceConfig::default()
    };
    router(state_with(Some(client), config))
}

pub enum Payload {
    None,
    Json(Value),
    Raw(&'static str),
    Plain(&'static str),
}

pub struct Case {
    pub name: &'static str,
    pub app: fn() -> Router,
    pub method: Method,
    pub path: &'static str,
    pub payload: Payload,
}

pub fn post(name: &'static str, path: &'static str, body: Value) -> Case {
    Case {
        name,
        app: demo_app,
        method: Method::POST,
        path,
        payload: Payload::Json(body),
    }
}

impl Case {
    fn on(mut self, app: fn() -> Router) -> Self {
        self.app = app;
        self
    }
}

pub fn cases() -> Vec<Case> {
    let window = |extra: Value| {
        let mut body = json!({
            "query": "#NLProc",
            "start": "2022-05-01T00:00:00Z",
            "end": "2022-05-08T00:00:00Z",
            "task": "sentiment",
        });
        body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        body
    };
    let long_text = "a".repeat(20 * 1024);
    let long_body: &'static str = Box::leak(format!("{{\"text\": \"{long_text}\"}}").into_boxed_str());
    vec![
        post("classify_sentiment", "/classify/sentiment", json!({"text": "I love this! @bob https://t.co/x"})),
        post("classify_sentiment_top_k", "/classify/sentiment", json!({"text": "what an awful day", "top_k": 2})),
        post(
            "classify_sentiment_spanish",
            "/classify/sentiment",
            json!({"text": "un día excelente", "language": "es"}),
        ),
        post("classify_emotion", "/classify/emotion", json!({"text": "so happy"})),
        post("classify_topic_multilabel", "/classify/topic", json!({"text": "game night"})),
        post("classify_stance", "/classify/stance", json!({"text": "my body my choice", "target": "Abortion"})),
        post("classify_stance_missing_target", "/classify/stance", json!({"text": "my body my choice"})),
        post(
            "classify_stance_unknown_target",
            "/classify/stance",
            json!({"text": "carbon tax now", "target": "climate"}),
        ),
        post("classify_target_not_accepted", "/classify/irony", json!({"text": "sure", "target": "x"})),
        post("classify_unknown_task", "/classify/sarcasm", json!({"text": "hello"})),
        post("classify_auxiliary_task", "/classify/language_model", json!({"text": "hello"})),
        post("classify_ner_wrong_problem_type", "/classify/ner", json!({"text": "hello"})),
        post(
            "classify_unsupported_language",
            "/classify/emotion",
            json!({"text": "hola", "language": "es"}),
        ),
        post("classify_unknown_language", "/classify/sentiment", json!({"text": "hi", "language": "xx"})),
        post("classify_empty_input", "/classify/sentiment", json!({"text": "   "})),
        post("classify_top_k_too_large", "/classify/sentiment", json!({"text": "hi", "top_k": 4})),
        post("classify_top_k_zero", "/classify/sentiment", json!({"text": "hi", "top_k": 0})),
        post("classify_unknown_field", "/classify/sentiment", json!({"text": "hi", "lang": "en"})),
        post("classify_missing_text", "/classify/sentiment", json!({"language": "en"})),
        post("classify_wrong_type", "/classify/sentiment", json!({"text": 42})),
        Case {
            payload: Payload::Raw("{\"text\": "),
            ..post("classify_malformed_json", "/classify/sentiment", Value::Null)
        },
        Case {
            payload: Payload::Plain("{\"text\": \"hi\"}"),
            ..post("classify_missing_content_type", "/classify/sentiment", Value::Null)
        },
        Case {
            payload: Payload::Raw(long_body),
            ..post("classify_payload_too_large", "/classify/sentiment", Value::Null)
        },
        post("classify_model_unavailable", "/classify/emotion", json!({"text": "hi"})).on(broken_model_app),
        post("ner_entities", "/ner", json!({"text": "Barack Obama landed in Paris today"})),
        post("ner_no_entities", "/ner", json!({"text": "nothing to see here"})),
        post("ner_normalized_offsets", "/ner", json!({"text": "@someone meet me in Paris https://t.co/a"})),
        post("ner_empty_input", "/ner", json!({"text": ""})),
        post("ner_unsupported_language", "/ner", json!({"text": "hola", "language": "es"})),
        post("mask_default_k", "/mask", json!({"text": "Have a nice <mask> !"})),
        post("mask_k_two", "/mask", json!({"text": "What a <mask> and what a <mask>", "k": 2})),
        post("mask_no_mask", "/mask", json!({"text": "Have a nice day"})),
        post("mask_k_too_large", "/mask", json!({"text": "Have a nice <mask>", "k": 50})),
        post("similarity_close", "/similarity", json!({"text_a": "my cat", "text_b": "a kitten"})),
        post("similarity_far", "/similarity", json!({"text_a": "cat", "text_b": "stock market"})),
        post("similarity_empty_input", "/similarity", json!({"text_a": "cat", "text_b": " "})),
        post("hashtag_daily_sentiment", "/hashtag-analysis", window(json!({}))),
        post(
            "hashtag_half_day_buckets",
            "/hashtag-analysis",
            window(json!({"end": "2022-05-02T00:00:00Z", "bucket_width": 43200})),
        ),
        post("hashtag_spanish", "/hashtag-analysis", window(json!({"language": "es"}))),
        post("hashtag_capped", "/hashtag-analysis", window(json!({"max_results": 5}))),
        post(
            "hashtag_stance",
            "/hashtag-analysis",
            window(json!({"task": "stance", "target": "abortion", "end": "2022-05-02T00:00:00Z"})),
        ),
        post("hashtag_topic_multilabel", "/hashtag-analysis", window(json!({"task": "topic", "end": "2022-05-02T00:00:00Z"}))),
        post("hashtag_empty_window", "/hashtag-analysis", window(json!({"start": "2023-01-01T00:00:00Z", "end": "2023-01-02T00:00:00Z"}))),
        post(
            "hashtag_inverted_window",
            "/hashtag-analysis",
            window(json!({"start": "2022-05-08T00:00:00Z", "end": "2022-05-01T00:00:00Z"})),
        ),
        post("hashtag_bad_bucket_width", "/hashtag-analysis", window(json!({"bucket_width": 0}))),
        post("hashtag_bad_max_results", "/hashtag-analysis", window(json!({"max_results": 0}))),
        post("hashtag_bad_timestamp", "/hashtag-analysis", window(json!({"start": "yesterday"}))),
        post("hashtag_blank_query", "/hashtag-analysis", window(json!({"query": "  "}))),
        post("hashtag_stance_missing_target", "/hashtag-analysis", window(json!({"task": "stance"}))),
        post("hashtag_unknown_task", "/hashtag-analysis", window(json!({"task": "sarcasm"}))),
        post("hashtag_ner_wrong_problem_type", "/hashtag-analysis", window(json!({"task": "ner"}))),
        post("hashtag_ingest_unavailable", "/hashtag-analysis", window(json!({}))).on(no_ingest_app),
        post("hashtag_rate_limited", "/hashtag-analysis", window(json!({})))
            .on(|| scripted_upstream_app(429, Some(Duration::from_secs(900)))),
        post("hashtag_upstream_auth", "/hashtag-analysis", window(json!({})))
            .on(|| scripted_upstream_app(401, None)),
        post("hashtag_upstream_bad_request", "/hashtag-analysis", window(json!({})))
            .on(|| scripted_upstream_app(400, None)),
        post("hashtag_timeout", "/hashtag-analysis", window(json!({}))).on(slow_upstream_app),
        Case {
            name: "tasks",
            app: demo_app,
            method: Method::GET,
            path: "/tasks",
            payload: Payload::None,
        },
        Case {
            name: "healthz",
            app: demo_app,
            method: Method::GET,
            path: "/healthz",
            payload: Payload::None,
        },
        Case {
            name: "unknown_route",
            app: demo_app,
            method: Method::GET,
            path: "/predict",
            payload: Payload::None,
        },
        Case {
            name: "method_not_allowed",
            app: demo_app,
            method: Method::GET,
            path: "/ner",
            payload: Payload::None,
        },
    ]
}

pub fn request(method: Method, path: &str, payload: &Payload) -> Request<Body> {
    let builder = Request::builder().method(method).uri(path);
    match payload {
        Payload::None => builder.body(Body::empty()),
        Payload::Json(v) => builder
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string())),
        Payload::Raw(s) => builder
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(*s)),
        Payload::Plain(s) => builder.body(Body::from(*s)),
    }
    .unwrap()
}

pub async fn send(app: Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Value) {
    let response = app.oneshot(req).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes)
        .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&bytes)));
    (status, headers, body)
}

pub fn schema_dir(root: &Path) -> PathBuf {
    root.join("schemas")
}

pub fn golden_dir(root: &Path) -> PathBuf {
    root.join("tests/golden")
}

pub fn schema(root: &Path, name: &str) -> jsonschema::Validator {
    let path = schema_dir(root).join(format!("{name}.json"));
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::options()
        .should_validate_formats(true)
        .build(&raw)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn endpoint(path: &str) -> &str {
    path.trim_start_matches('/').split('/').next().unwrap()
}

pub fn violations(validator: &jsonschema::Validator, instance: &Value, what: &str) -> Vec<String> {
    validator
        .iter_errors(instance)
        .map(|e| format!("{what}: schema violation at {}: {e}", e.instance_path))
        .collect()
}

/// Outcome of replaying every case against its golden file.
#[derive(Debug, Default)]
pub struct GoldenReport {
    pub cases: usize,
    pub endpoints: BTreeSet<String>,
    pub error_codes: BTreeSet<String>,
    pub failures: Vec<String>,
}

/// Replays [`cases`], validates requests and responses against the schemas
/// under `root` and compares with `root/tests/golden`. With `update` the
/// goldens are rewritten instead of compared.
pub async fn check_goldens(root: &Path, update: bool) -> GoldenReport {
    let error_schema = schema(root, "error");
    std::fs::create_dir_all(golden_dir(root)).unwrap();
    let mut report = GoldenReport::default();
    for case in cases() {
        report.cases += 1;
        let (status, _, body) = send((case.app)(), request(case.method.clone(), case.path, &case.payload)).await;
        let ep = endpoint(case.path);

        if status.is_success() {
            report.endpoints.insert(ep.to_string());
            report.failures.extend(violations(&schema(root, &format!("{ep}.response")), &body, case.name));
            if let Payload::Json(req) = &case.payload {
                report.failures.extend(violations(&schema(root, &format!("{ep}.request")), req, case.name));
            }
        } else {
            report.failures.extend(violations(&error_schema, &body, case.name));
            if let Some(code) = body["error"]["code"].as_str() {
                report.error_codes.insert(code.to_string());
            }
        }

        let request_value = match &case.payload {
            Payload::None => Value::Null,
            Payload::Json(v) => v.clone(),
            Payload::Raw(s) | Payload::Plain(s) if s.len() > 256 => json!(format!("<{} bytes>", s.len())),
            Payload::Raw(s) | Payload::Plain(s) => json!(s),
        };
        let actual = json!({
            "method": case.method.as_str(),
            "path": case.path,
            "request": request_value,
            "status": status.as_u16(),
            "response": body,
        });
        let path = golden_dir(root).join(format!("{}.json", case.name));
        if update {
            std::fs::write(&path, serde_json::to_string_pretty(&actual).unwrap() + "\n").unwrap();
            continue;
        }
        let expected: Value = match std::fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).unwrap(),
            Err(_) => {
                report.failures.push(format!("{}: golden file missing", case.name));
                continue;
            }
        };
        if expected != actual {
            report.failures.push(format!(
                "{}:\nexpected {}\n  actual {}",
                case.name,
                serde_json::to_string_pretty(&expected).unwrap(),
                serde_json::to_string_pretty(&actual).unwrap()
            ));
        }
    }
    report
}

async fn post_json(path: &str, body: Value) -> Value {
    let (status, _, out) = send(demo_app(), request(Method::POST, path, &Payload::Json(body))).await;
    assert!(status.is_success(), "{path}: {status} {out}");
    out
}

fn strip_envelope(mut v: Value, keys: &[&str]) -> Value {
    let obj = v.as_object_mut().unwrap();
    for k in keys {
        obj.remove(*k);
    }
    v
}

/// Compares HTTP payloads with the library result serialized directly.
pub async fn check_library_equivalence() -> Vec<String> {
    let registry = demo_registry();
    let mut failures = Vec::new();
    let mut compare = |what: &str, http: Value, lib: Value| {
        if http != lib {
            failures.push(format!("{what}: http {http} != library {lib}"));
        }
    };

    for (task, text, target) in [
        ("sentiment", "I love this! @bob https://t.co/x", None),
        ("topic", "game night", None),
        ("stance", "my body my choice", Some("abortion")),
    ] {
        let mut body = json!({"text": text});
        if let Some(t) = target {
            body["target"] = json!(t);
        }
        let http = post_json(&format!("/classify/{task}"), body).await;
        let handle = registry.load_for_language(task, None).unwrap();
        let lib = serde_json::to_value(predict_any(&handle, text, target).unwrap()).unwrap();
        compare(task, strip_envelope(http, &["schema_version", "task", "target", "model_revision"]), lib);
    }

    let text = "Barack Obama landed in Paris today";
    let http = post_json("/ner", json!({"text": text})).await;
    let handle = registry.load_for_language("ner", None).unwrap();
    compare("ner", http["entities"].clone(), serde_json::to_value(extract_entities(&handle, text).unwrap()).unwrap());

    let text = "What a <mask> and what a <mask>";
    let http = post_json("/mask", json!({"text": text, "k": 3})).await;
    let handle = registry.load_for_language("language_model", None).unwrap();
    compare("mask", http["masks"].clone(), serde_json::to_value(predict_mask(&handle, text, 3).unwrap()).unwrap());

    let (a, b) = ("my cat", "a kitten");
    let http = post_json("/similarity", json!({"text_a": a, "text_b": b})).await;
    let handle = registry.load_for_language("sentence_embedding", None).unwrap();
    let encoder = TweetEncoder::from_handle(&handle).unwrap();
    compare("similarity", http["score"].clone(), json!(tweet_similarity(&encoder, a, b).unwrap()));

    failures
}
