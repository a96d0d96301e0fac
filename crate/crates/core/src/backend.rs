//! Model backends.
//!
//! A backend is an encoder with one task head on top. Each head shape gets its
//! own trait so that stubs, the native models in [`crate::native`] and external
//! transformer runtimes can all sit behind a [`crate::registry::ModelHandle`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::ModelCard;

/// A word-level token with its character span in the text it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// Per-token tag logits. `logits[i]` scores `tokens[i]` over the tagger's tag list.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenLogits {
    pub tokens: Vec<Token>,
    pub logits: Vec<Vec<f64>>,
}

pub trait SequenceClassifier: Send + Sync {
    fn num_labels(&self) -> usize;

    fn logits(&self, text: &str) -> Result<Vec<f64>>;

    fn logits_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        texts.iter().map(|t| self.logits(t)).collect()
    }
}

pub trait TokenTagger: Send + Sync {
    /// Tag names in output order, e.g. `O`, `B-person`, `I-person`.
    fn tags(&self) -> &[String];

    /// Word-level logits; for subword models only the first piece of each word is scored.
    fn tag_logits(&self, text: &str) -> Result<TokenLogits>;
}

pub trait MaskFiller: Send + Sync {
    fn mask_token(&self) -> &str;

    /// Display form of every vocabulary item, indexed by id.
    fn vocab(&self) -> &[String];

    fn is_special(&self, id: usize) -> bool;

    /// One logit vector over the vocabulary per mask occurrence, in text order.
    fn mask_logits(&self, text: &str) -> Result<Vec<Vec<f64>>>;
}

pub trait TokenEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Final-layer states of every token the encoder attends to.
    fn token_states(&self, text: &str) -> Result<Vec<Vec<f64>>>;
}

/// Classifier heads selected by stance target.
#[derive(Clone, Default)]
pub struct TargetHeads {
    pub by_target: BTreeMap<String, (ModelCard, Arc<dyn SequenceClassifier>)>,
    pub generic: Option<(ModelCard, Arc<dyn SequenceClassifier>)>,
}

impl TargetHeads {
    pub fn select(&self, target: &str) -> Option<&(ModelCard, Arc<dyn SequenceClassifier>)> {
        self.by_target
            .get(&target.to_lowercase())
            .or(self.generic.as_ref())
    }

    /// The generic head, or the only per-target head when there is exactly one.
    pub fn default_head(&self) -> Option<&(ModelCard, Arc<dyn SequenceClassifier>)> {
        self.generic.as_ref().or_else(|| match self.by_target.len() {
            1 => self.by_target.values().next(),
            _ => None,
        })
    }
}

#[derive(Clone)]
pub enum Backend {
    Classifier(Arc<dyn SequenceClassifier>),
    PerTarget(Arc<TargetHeads>),
    Tagger(Arc<dyn TokenTagger>),
    MaskFiller(Arc<dyn MaskFiller>),
    Encoder(Arc<dyn TokenEncoder>),
}

impl Backend {
    pub fn classifier(model: impl SequenceClassifier + 'static) -> Self {
        Backend::Classifier(Arc::new(model))
    }

    pub fn tagger(model: impl TokenTagger + 'static) -> Self {
        Backend::Tagger(Arc::new(model))
    }

    pub fn mask_filler(model: impl MaskFiller + 'static) -> Self {
        Backend::MaskFiller(Arc::new(model))
    }

    pub fn encoder(model: impl TokenEncoder + 'static) -> Self {
        Backend::Encoder(Arc::new(model))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Backend::Classifier(_) => "classifier",
            Backend::PerTarget(_) => "per-target classifier",
            Backend::Tagger(_) => "tagger",
            Backend::MaskFiller(_) => "mask filler",
            Backend::Encoder(_) => "encoder",
        }
    }
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.kind_name())
    }
}

/// Splits text into word and punctuation tokens with character offsets.
///
/// Whitespace separates tokens; each non-alphanumeric, non-`@`/`#`/`_`/`'`
/// character is a token on its own.
pub fn word_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let flush = |current: &mut Option<(usize, String)>, tokens: &mut Vec<Token>, end: usize| {
        if let Some((start, surface)) = current.take() {
            tokens.push(Token {
                surface,
                start,
                end,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens, i);
        } else if c.is_alphanumeric() || matches!(c, '@' | '#' | '_' | '\'') {
            match current.as_mut() {
                Some((_, s)) => s.push(c),
                None => current = Some((i, c.to_string())),
            }
        } else {
            flush(&mut current, &mut tokens, i);
            tokens.push(Token {
                surface: c.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    let len = text.chars().count();
    flush(&mut current, &mut tokens, len);
    tokens
}

/// Whitespace-separated tokens with character offsets.
pub fn whitespace_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut len = 0;
    for (i, c) in text.chars().enumerate() {
        len = i + 1;
        if c.is_whitespace() {
            if let Some((start, surface)) = current.take() {
                tokens.push(Token { surface, start, end: i });
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    if let Some((start, surface)) = current {
        tokens.push(Token { surface, start, end: len });
    }
    tokens
}
