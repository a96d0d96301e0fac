//! Request and response bodies.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use tweetkit::classification::Prediction;
use tweetkit::masked_lm::MaskPrediction;
use tweetkit::ner::EntitySpan;
use tweetkit::registry::ProblemType;
use tweetkit_ingest::TimeBucketedAggregate;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub text: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub schema_version: String,
    pub task: String,
    #[serde(flatten)]
    pub prediction: Prediction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<Vec<RankedLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub model_revision: String,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NerRequest {
    pub text: String,
    #[serde(default)]
    pub language: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NerResponse {
    pub schema_version: String,
    pub entities: Vec<EntitySpan>,
    pub model_revision: String,
}

pub const DEFAULT_MASK_K: usize = 5;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub schema_version: String,
    pub masks: Vec<MaskPrediction>,
    pub model_revision: String,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityRequest {
    pub text_a: String,
    pub text_b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub schema_version: String,
    /// Cosine mapped onto 0 to 100.
    pub score: f64,
    pub model_revision: String,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HashtagRequest {
    pub query: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub task: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    /// Seconds; one day when absent.
    #[serde(default)]
    pub bucket_width: Option<i64>,
    #[serde(default)]
    pub max_results: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashtagResponse {
    pub schema_version: String,
    pub query: String,
    pub task: String,
    #[serde(flatten)]
    pub aggregate: TimeBucketedAggregate,
    pub tweets_analyzed: usize,
    /// Fetched tweets left out because nothing remained after normalization.
    pub tweets_skipped: usize,
    pub max_results: usize,
    /// True when the window held more tweets than `max_results`.
    pub capped: bool,
    pub model_revision: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub name: String,
    pub problem_type: ProblemType,
    pub labels: Vec<String>,
    pub metric: String,
    pub needs_target: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    /// Language codes beyond English that have a model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub languages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasksResponse {
    pub schema_version: String,
    pub tasks: Vec<TaskSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema_version: String,
    pub status: String,
    pub loaded_models: Vec<String>,
}
