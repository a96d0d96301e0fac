use std::sync::Arc;

use crate::backend::{Backend, TokenEncoder};
use crate::error::{Error, Result};
use crate::preprocessing::normalize_text;
use crate::registry::ModelHandle;

use super::vector::{dot, l2_normalize, EmbeddingVector};

/// Sentence encoder: mean of final-layer token states, then L2 normalization.
#[derive(Clone)]
pub struct TweetEncoder {
    inner: Arc<dyn TokenEncoder>,
}

impl TweetEncoder {
    pub fn new(inner: Arc<dyn TokenEncoder>) -> Self {
        Self { inner }
    }

    pub fn from_handle(handle: &ModelHandle) -> Result<Self> {
        match handle.backend() {
            Backend::Encoder(e) => Ok(Self::new(e.clone())),
            other => Err(Error::Precondition(format!(
                "{} backend cannot embed tweets",
                other.kind_name()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let normalized = normalize_text(text)?;
        let states = self.inner.token_states(&normalized.text)?;
        if states.is_empty() {
            return Err(Error::Encoder("encoder produced no token states".into()));
        }
        let dim = self.inner.dim();
        let mut pooled = vec![0.0; dim];
        for s in &states {
            if s.len() != dim {
                return Err(Error::Encoder(format!(
                    "token state has {} dimensions, encoder declares {dim}",
                    s.len()
                )));
            }
            pooled.iter_mut().zip(s).for_each(|(p, x)| *p += x);
        }
        let n = states.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        let unit = l2_normalize(&pooled).map_err(|_| Error::Encoder("pooled state is zero".into()))?;
        EmbeddingVector::new(unit).map_err(|e| Error::Encoder(e.to_string()))
    }
}

pub fn embed_tweet(encoder: &TweetEncoder, text: &str) -> Result<EmbeddingVector> {
    encoder.embed(text)
}

/// Maps a cosine in [-1, 1] onto a 0 to 100 score.
pub fn similarity_score(cosine: f64) -> f64 {
    100.0 * (cosine.clamp(-1.0, 1.0) + 1.0) / 2.0
}

pub fn tweet_similarity(encoder: &TweetEncoder, t1: &str, t2: &str) -> Result<f64> {
    Ok(similarity_score(tweet_cosine(encoder, t1, t2)?))
}

pub fn tweet_cosine(encoder: &TweetEncoder, t1: &str, t2: &str) -> Result<f64> {
    encoder.embed(t1)?.cosine(&encoder.embed(t2)?)
}

/// Fraction of queries whose nearest candidate in `space` is `gold[i]`.
pub fn retrieval_accuracy(queries: &[Vec<f64>], gold: &[usize], space: &[Vec<f64>]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Precondition("no retrieval queries".into()));
    }
    if queries.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: queries.len(),
            right: gold.len(),
        });
    }
    let units: Vec<Vec<f64>> = space.iter().map(|v| unit_or_zero(v)).collect();
    let hits = queries
        .iter()
        .zip(gold)
        .filter(|(q, &g)| {
            let q = unit_or_zero(q);
            nearest_unit(&q, &units) == Some(g)
        })
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    l2_normalize(v).unwrap_or_else(|_| vec![0.0; v.len()])
}

fn nearest_unit(query: &[f64], units: &[Vec<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, u) in units.iter().enumerate() {
        let s = dot(query, u);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Retrieval accuracy@1 where tweet `i` should retrieve reply `i`.
pub fn pair_retrieval_accuracy(tweets: &[Vec<f64>], replies: &[Vec<f64>]) -> Result<f64> {
    if tweets.len() != replies.len() {
        return Err(Error::LengthMismatch {
            left: tweets.len(),
            right: replies.len(),
        });
    }
    let gold: Vec<usize> = (0..tweets.len()).collect();
    retrieval_accuracy(tweets, &gold, replies)
}

pub fn retrieval_accuracy_at_1(encoder: &TweetEncoder, pairs: &[(String, String)]) -> Result<f64> {
    let (tweets, replies) = embed_pairs(encoder, pairs)?;
    pair_retrieval_accuracy(&tweets, &replies)
}

fn embed_pairs(encoder: &TweetEncoder, pairs: &[(String, String)]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut tweets = Vec::with_capacity(pairs.len());
    let mut replies = Vec::with_capacity(pairs.len());
    for (t, r) in pairs {
        tweets.push(encoder.embed(t)?.into_values());
        replies.push(encoder.embed(r)?.into_values());
    }
    Ok((tweets, replies))
}
