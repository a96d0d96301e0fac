//! Deterministic stand-in backends for tests, fixtures and demos.

use std::collections::HashMap;

use crate::backend::{whitespace_tokens, word_tokens, Backend, MaskFiller, SequenceClassifier, TokenEncoder, TokenLogits, TokenTagger};
use crate::error::{Error, Result};
use crate::registry::{ModelCard, ModelStore, TaskSpec};

/// Emits the same logits for every input.
#[derive(Clone, Debug)]
pub struct ConstantClassifier {
    logits: Vec<f64>,
}

impl ConstantClassifier {
    /// All-zero logits over `n` labels.
    pub fn new(n: usize) -> Self {
        Self { logits: vec![0.0; n] }
    }

    pub fn with_logits(logits: Vec<f64>) -> Self {
        Self { logits }
    }
}

impl SequenceClassifier for ConstantClassifier {
    fn num_labels(&self) -> usize {
        self.logits.len()
    }

    fn logits(&self, _text: &str) -> Result<Vec<f64>> {
        Ok(self.logits.clone())
    }
}

/// Looks texts up in a table; unknown texts get the fallback logits.
#[derive(Clone, Debug)]
pub struct LookupClassifier {
    table: HashMap<String, Vec<f64>>,
    fallback: Vec<f64>,
}

impl LookupClassifier {
    pub fn new(num_labels: usize) -> Self {
        Self {
            table: HashMap::new(),
            fallback: vec![0.0; num_labels],
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.fallback.len());
        self.table.insert(text.into(), logits);
    }
}

impl SequenceClassifier for LookupClassifier {
    fn num_labels(&self) -> usize {
        self.fallback.len()
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.table.get(text).unwrap_or(&self.fallback).clone())
    }
}

/// Always fails; exercises error paths.
#[derive(Clone, Debug)]
pub struct FailingClassifier {
    pub num_labels: usize,
}

impl SequenceClassifier for FailingClassifier {
    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn logits(&self, _text: &str) -> Result<Vec<f64>> {
        Err(Error::Encoder("stub failure".into()))
    }
}

/// Tags tokens by surface form; anything not listed is `O`.
#[derive(Clone, Debug)]
pub struct ScriptedTagger {
    tags: Vec<String>,
    by_surface: HashMap<String, usize>,
    confidence_logit: f64,
}

impl ScriptedTagger {
    pub fn new(tags: Vec<String>) -> Self {
        assert!(tags.iter().any(|t| t == "O"), "tag list needs `O`");
        Self {
            tags,
            by_surface: HashMap::new(),
            confidence_logit: 4.0,
        }
    }

    pub fn tag(mut self, surface: &str, tag: &str) -> Self {
        let id = self
            .tags
            .iter()
            .position(|t| t == tag)
            .unwrap_or_else(|| panic!("unknown tag {tag}"));
        self.by_surface.insert(surface.to_string(), id);
        self
    }
}

impl TokenTagger for ScriptedTagger {
    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn tag_logits(&self, text: &str) -> Result<TokenLogits> {
        let outside = self.tags.iter().position(|t| t == "O").unwrap_or(0);
        let tokens = word_tokens(text);
        let logits = tokens
            .iter()
            .map(|tok| {
                let id = self.by_surface.get(&tok.surface).copied().unwrap_or(outside);
                let mut row = vec![0.0; self.tags.len()];
                row[id] = self.confidence_logit;
                row
            })
            .collect();
        Ok(TokenLogits { tokens, logits })
    }
}

/// Looks whole texts up in a table of per-token tags; unknown texts are all `O`.
/// Tokens are whitespace-separated.
#[derive(Clone, Debug)]
pub struct LookupTagger {
    tags: Vec<String>,
    table: HashMap<String, Vec<usize>>,
}

impl LookupTagger {
    pub fn new(tags: Vec<String>) -> Self {
        assert!(tags.iter().any(|t| t == "O"), "tag list needs `O`");
        Self {
            tags,
            table: HashMap::new(),
        }
    }

    /// Registers tag ids for every whitespace token of `text`.
    pub fn insert(&mut self, text: impl Into<String>, tag_ids: Vec<usize>) {
        assert!(tag_ids.iter().all(|&t| t < self.tags.len()));
        self.table.insert(text.into(), tag_ids);
    }
}

impl TokenTagger for LookupTagger {
    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn tag_logits(&self, text: &str) -> Result<TokenLogits> {
        let outside = self.tags.iter().position(|t| t == "O").unwrap_or(0);
        let tokens = whitespace_tokens(text);
        let ids = self.table.get(text).filter(|ids| ids.len() == tokens.len());
        let logits = (0..tokens.len())
            .map(|i| {
                let mut row = vec![0.0; self.tags.len()];
                row[ids.map_or(outside, |ids| ids[i])] = 10.0;
                row
            })
            .collect();
        Ok(TokenLogits { tokens, logits })
    }
}

/// Mask filler with fixed per-mask logits; uniform when built with [`FixedMaskFiller::uniform`].
#[derive(Clone, Debug)]
pub struct FixedMaskFiller {
    vocab: Vec<String>,
    special: Vec<bool>,
    logits: Vec<f64>,
    mask_token: String,
}

impl FixedMaskFiller {
    pub fn uniform(vocab: Vec<String>) -> Self {
        let n = vocab.len();
        Self::with_logits(vocab, vec![0.0; n])
    }

    pub fn with_logits(vocab: Vec<String>, logits: Vec<f64>) -> Self {
        assert_eq!(vocab.len(), logits.len());
        let special = vocab
            .iter()
            .map(|w| w.starts_with('<') && w.ends_with('>') && w.len() > 2)
            .collect();
        Self {
            vocab,
            special,
            logits,
            mask_token: "<mask>".into(),
        }
    }
}

impl MaskFiller for FixedMaskFiller {
    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn is_special(&self, id: usize) -> bool {
        self.special[id]
    }

    fn mask_logits(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let n = text.matches(self.mask_token.as_str()).count();
        Ok(vec![self.logits.clone(); n])
    }
}

/// Encodes each word token as a fixed vector from a table; unknown words map to `fallback`.
#[derive(Clone, Debug)]
pub struct TableEncoder {
    table: HashMap<String, Vec<f64>>,
    fallback: Vec<f64>,
}

impl TableEncoder {
    pub fn new(dim: usize) -> Self {
        let mut fallback = vec![0.0; dim];
        fallback[0] = 1.0;
        Self {
            table: HashMap::new(),
            fallback,
        }
    }

    pub fn with(mut self, word: &str, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.fallback.len());
        self.table.insert(word.to_string(), vector);
        self
    }
}

impl TokenEncoder for TableEncoder {
    fn dim(&self) -> usize {
        self.fallback.len()
    }

    fn token_states(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        Ok(word_tokens(text)
            .into_iter()
            .map(|t| self.table.get(&t.surface).unwrap_or(&self.fallback).clone())
            .collect())
    }
}

/// Serves registered stub backends by exact URI. `stub:constant?labels=N`
/// is recognised without registration.
#[derive(Clone, Default)]
pub struct StubStore {
    backends: HashMap<String, Backend>,
}

impl StubStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, uri: &str, backend: Backend) -> Self {
        self.backends.insert(uri.to_string(), backend);
        self
    }

    pub fn insert(&mut self, uri: &str, backend: Backend) {
        self.backends.insert(uri.to_string(), backend);
    }
}

impl ModelStore for StubStore {
    fn open(&self, card: &ModelCard, _spec: &TaskSpec) -> Result<Backend> {
        if let Some(b) = self.backends.get(&card.source_uri) {
            return Ok(b.clone());
        }
        if let Some(n) = card
            .source_uri
            .strip_prefix("stub:constant?labels=")
            .and_then(|n| n.parse().ok())
        {
            return Ok(Backend::classifier(ConstantClassifier::new(n)));
        }
        Err(Error::ModelFetch {
            uri: card.source_uri.clone(),
            message: "no stub registered under this URI".into(),
        })
    }
}
