//! Single-label, multi-label and target-conditioned tweet classification.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, SequenceClassifier};
use crate::error::{Error, Result};
use crate::preprocessing::normalize_text;
use crate::registry::{ModelHandle, ProblemType};

/// Decision threshold on per-label logistic scores for multi-label tasks.
pub const DEFAULT_MULTILABEL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "label")]
    Single(String),
    #[serde(rename = "labels")]
    Multi(Vec<String>),
}

/// Predicted label(s) plus scores for every label, in label-index order.
///
/// Single-label scores form a softmax distribution; multi-label scores are
/// independent logistic probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub decision: Decision,
    pub distribution: IndexMap<String, f64>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<&str> {
        match &self.decision {
            Decision::Single(l) => vec![l.as_str()],
            Decision::Multi(ls) => ls.iter().map(String::as_str).collect(),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match &self.decision {
            Decision::Single(l) => Some(l),
            Decision::Multi(_) => None,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn classifier<'a>(handle: &'a ModelHandle, expected: ProblemType) -> Result<&'a dyn SequenceClassifier> {
    let actual = handle.spec().problem_type;
    if actual != expected {
        return Err(Error::WrongProblemType { expected, actual });
    }
    match handle.backend() {
        Backend::Classifier(c) => Ok(c.as_ref()),
        Backend::PerTarget(_) => Err(Error::Precondition(format!(
            "task `{}` needs a target; use predict_stance",
            handle.spec().name
        ))),
        other => Err(Error::Precondition(format!(
            "{} backend cannot classify",
            other.kind_name()
        ))),
    }
}

fn check_logits(handle: &ModelHandle, logits: &[f64]) -> Result<()> {
    if logits.len() != handle.spec().labels.len() {
        return Err(Error::Encoder(format!(
            "backend returned {} logits for {} labels",
            logits.len(),
            handle.spec().labels.len()
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Encoder("backend returned non-finite logits".into()));
    }
    Ok(())
}

fn single_from_logits(handle: &ModelHandle, logits: &[f64]) -> Result<Prediction> {
    check_logits(handle, logits)?;
    let probs = softmax(logits);
    let labels = &handle.spec().labels;
    Ok(Prediction {
        decision: Decision::Single(labels[argmax(&probs)].clone()),
        distribution: labels.iter().cloned().zip(probs).collect(),
    })
}

fn multi_from_logits(handle: &ModelHandle, logits: &[f64], threshold: f64) -> Result<Prediction> {
    check_logits(handle, logits)?;
    let labels = &handle.spec().labels;
    let scores: Vec<f64> = logits.iter().map(|&l| logistic(l)).collect();
    let chosen = labels
        .iter()
        .zip(&scores)
        .filter(|(_, s)| **s >= threshold)
        .map(|(l, _)| l.clone())
        .collect();
    Ok(Prediction {
        decision: Decision::Multi(chosen),
        distribution: labels.iter().cloned().zip(scores).collect(),
    })
}

/// Softmax classification of the normalized text; ties go to the lowest label index.
pub fn predict(handle: &ModelHandle, text: &str) -> Result<Prediction> {
    let model = classifier(handle, ProblemType::SingleLabel)?;
    let normalized = normalize_text(text)?;
    single_from_logits(handle, &model.logits(&normalized.text)?)
}

/// The `k` best labels by score, descending; equal scores keep label order.
pub fn predict_topk(handle: &ModelHandle, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let available = handle.spec().labels.len();
    if k == 0 || k > available {
        return Err(Error::KTooLarge { k, available });
    }
    let prediction = match handle.spec().problem_type {
        ProblemType::MultiLabel => predict_multilabel(handle, text, DEFAULT_MULTILABEL_THRESHOLD)?,
        _ => predict(handle, text)?,
    };
    let mut ranked: Vec<(String, f64)> = prediction.distribution.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    Ok(ranked)
}

/// Labels whose logistic score reaches `threshold`; may be empty.
pub fn predict_multilabel(handle: &ModelHandle, text: &str, threshold: f64) -> Result<Prediction> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Precondition(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let model = classifier(handle, ProblemType::MultiLabel)?;
    let normalized = normalize_text(text)?;
    multi_from_logits(handle, &model.logits(&normalized.text)?, threshold)
}

/// Classifies stance towards `target` with the head registered for it.
pub fn predict_stance(handle: &ModelHandle, text: &str, target: &str) -> Result<Prediction> {
    let (_, model) = stance_head(handle, target)?;
    let normalized = normalize_text(text)?;
    single_from_logits(handle, &model.logits(&normalized.text)?)
}

/// Revision of the checkpoint that serves `target`.
pub fn stance_revision<'a>(handle: &'a ModelHandle, target: &str) -> Result<&'a str> {
    Ok(stance_head(handle, target)?.0)
}

fn stance_head<'a>(
    handle: &'a ModelHandle,
    target: &str,
) -> Result<(&'a str, &'a dyn SequenceClassifier)> {
    let target = target.trim();
    if target.is_empty() {
        return Err(Error::Precondition("stance target is empty".into()));
    }
    let spec = handle.spec();
    if !spec.needs_target {
        return Err(Error::Precondition(format!(
            "task `{}` is not target-conditioned",
            spec.name
        )));
    }
    match handle.backend() {
        Backend::PerTarget(heads) => heads
            .select(target)
            .map(|(card, model)| (card.revision.as_str(), model.as_ref()))
            .ok_or_else(|| Error::UnknownTarget(target.to_string())),
        // a plain classifier is target-generic
        Backend::Classifier(model) => Ok((handle.revision(), model.as_ref())),
        other => Err(Error::Precondition(format!(
            "{} backend cannot classify stance",
            other.kind_name()
        ))),
    }
}

/// Classifies with the handle's default decision rule (threshold 0.5 for
/// multi-label; `target` is required for target-conditioned tasks).
pub fn predict_any(handle: &ModelHandle, text: &str, target: Option<&str>) -> Result<Prediction> {
    match (handle.spec().problem_type, target) {
        (ProblemType::MultiLabel, _) => {
            predict_multilabel(handle, text, DEFAULT_MULTILABEL_THRESHOLD)
        }
        (_, Some(t)) if handle.spec().needs_target => predict_stance(handle, text, t),
        _ => predict(handle, text),
    }
}

/// Order-preserving batch prediction; the first failing item is reported with its index.
pub fn predict_batch(handle: &ModelHandle, texts: &[&str]) -> Result<Vec<Prediction>> {
    predict_batch_with_target(handle, texts, None)
}

pub fn predict_batch_with_target(
    handle: &ModelHandle,
    texts: &[&str],
    target: Option<&str>,
) -> Result<Vec<Prediction>> {
    if texts.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let model: &dyn SequenceClassifier = match (handle.backend(), target) {
        (Backend::PerTarget(_), Some(t)) => stance_head(handle, t)?.1,
        _ => classifier(handle, handle.spec().problem_type)?,
    };
    let mut normalized = Vec::with_capacity(texts.len());
    for (index, text) in texts.iter().enumerate() {
        let n = normalize_text(text).map_err(|e| Error::BatchItem {
            index,
            source: Box::new(e),
        })?;
        normalized.push(n.text);
    }
    let refs: Vec<&str> = normalized.iter().map(String::as_str).collect();
    let logits = match model.logits_batch(&refs) {
        Ok(l) if l.len() == refs.len() => l,
        // locate the failing item
        _ => refs
            .iter()
            .enumerate()
            .map(|(index, t)| {
                model.logits(t).map_err(|e| Error::BatchItem {
                    index,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?,
    };
    logits
        .iter()
        .enumerate()
        .map(|(index, l)| {
            let p = match handle.spec().problem_type {
                ProblemType::MultiLabel => {
                    multi_from_logits(handle, l, DEFAULT_MULTILABEL_THRESHOLD)
                }
                _ => single_from_logits(handle, l),
            };
            p.map_err(|e| Error::BatchItem {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}
