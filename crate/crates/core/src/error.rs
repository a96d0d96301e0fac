use std::path::PathBuf;

use thiserror::Error;

use crate::registry::ProblemType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input text is empty")]
    EmptyInput,

    #[error("no mask token `{0}` present in input")]
    NoMaskPresent(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("task `{task}` has no model covering language `{code}`")]
    UnsupportedLanguage { task: String, code: String },

    #[error("unknown stance target `{0}`")]
    UnknownTarget(String),

    #[error("failed to fetch model `{uri}`: {message}")]
    ModelFetch { uri: String, message: String },

    #[error("model head has {actual} outputs but the task defines {expected} labels")]
    IncompatibleHead { expected: usize, actual: usize },

    #[error("operation expects a {expected:?} model, got {actual:?}")]
    WrongProblemType {
        expected: ProblemType,
        actual: ProblemType,
    },

    #[error("encoder failure: {0}")]
    Encoder(String),

    #[error("k = {k} exceeds the {available} available candidates")]
    KTooLarge { k: usize, available: usize },

    #[error("malformed tag sequence: {0}")]
    MalformedTags(String),

    #[error("word `{0}` is out of vocabulary and the table has no subword buckets")]
    OutOfVocabulary(String),

    #[error("cannot compute cosine of a zero vector")]
    ZeroVector,

    #[error("batch of {0} pairs is too small; at least 2 are needed for in-batch negatives")]
    BatchTooSmall(usize),

    #[error("vector {index} has L2 norm {norm}, expected 1")]
    NonNormalizedInput { index: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training data exhausted before one full batch of {0}")]
    DataExhausted(usize),

    #[error("loss diverged (non-finite) at step {0}")]
    DivergedLoss(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("model is for task `{model}` but dataset is for `{dataset}`")]
    TaskMismatch { model: String, dataset: String },

    #[error("fine-tuning grid is empty")]
    EmptyGrid,

    #[error("tweet {0} has no timestamp")]
    MissingTimestamp(usize),

    #[error("item {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid manifest record at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether retrying the same call may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::ModelFetch { .. })
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
