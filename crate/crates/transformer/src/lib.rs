//! RoBERTa-family transformer backends for tweetkit.
//!
//! Checkpoints come from a Hugging Face style hub or a local directory holding
//! `config.json`, a tokenizer (`tokenizer.json`, or `vocab.json` with
//! `merges.txt`) and weights (`model.safetensors` or `pytorch_model.bin`).
//! Downloads are cached per repository and revision.

pub mod config;
pub mod hub;
pub mod model;
pub mod store;
pub mod text;

pub use config::ModelConfig;
pub use hub::Hub;
pub use model::{Encoder, TransformerClassifier, TransformerEncoder, TransformerMaskFiller, TransformerTagger};
pub use store::{default_store, TransformerStore};
pub use text::TextEncoder;
