//! Tweet understanding toolkit: normalization, task registry, classification,
//! named entities, masked-word prediction, embeddings and evaluation.

pub mod backend;
pub mod classification;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod masked_lm;
pub mod native;
pub mod ner;
pub mod optim;
pub mod preprocessing;
pub mod registry;
pub mod stub;

pub use backend::{Backend, MaskFiller, SequenceClassifier, Token, TokenEncoder, TokenTagger};
pub use error::{Error, Result};
pub use preprocessing::{normalize, normalize_text, NormalizedTweet, RawTweet};
pub use registry::{ModelCard, ModelHandle, ModelStore, ProblemType, Registry, TaskSpec};
