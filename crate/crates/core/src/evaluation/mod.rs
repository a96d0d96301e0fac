//! Benchmark metrics, dataset loading, the fine-tuning protocol and reports.
//!
//! Scores are fractions in [0, 1] throughout; only [`BenchmarkReport`]'s text
//! table shows percentages.

pub mod benchmark;
pub mod dataset;
pub mod finetune;
pub mod metrics;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::backend::{whitespace_tokens, Backend};
use crate::classification::predict_batch_with_target;
use crate::embeddings::{TweetEncoder, WordTable};
use crate::error::{Error, Result};
use crate::ner::{decode_bio, extract_entities, EntitySpan, TagSequence};
use crate::registry::{Metric, ModelHandle, ProblemType};

pub use benchmark::{
    reference_scores, run_benchmark, BenchmarkConfig, BenchmarkReport, TaskResult, REFERENCE_MODEL,
};
pub use dataset::{load_dataset, read_scored_pairs, Gold, LabeledDataset, Split};
pub use finetune::{
    finetune, CellLog, FinetuneGrid, FinetuneOutcome, Finetuner, NativeFinetuner, OracleFinetuner,
};
pub use synthetic::{synthetic_dataset, write_synthetic_benchmark};
pub use metrics::{
    avg_f_of_classes, f1_of_class, macro_f1, macro_recall, multilabel_macro_f1, pearson, span_macro_f1,
    span_micro_f1, spearman, stance_avg_f, ConfusionCounts,
};

/// How entity-level F1 is pooled across types.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanAveraging {
    #[default]
    Macro,
    Micro,
}

/// Scores `handle` on `dataset` with the task's official metric.
pub fn evaluate_task(handle: &ModelHandle, dataset: &LabeledDataset) -> Result<f64> {
    evaluate_task_with(handle, dataset, SpanAveraging::Macro)
}

pub fn evaluate_task_with(handle: &ModelHandle, dataset: &LabeledDataset, averaging: SpanAveraging) -> Result<f64> {
    if dataset.split != Split::Test {
        log::warn!(
            "evaluating `{}` on the {} split; reported scores use test",
            dataset.spec.name,
            dataset.split
        );
    }
    score(handle, dataset, averaging)
}

/// Metric without the split check; used for validation during fine-tuning.
pub(crate) fn score(handle: &ModelHandle, dataset: &LabeledDataset, averaging: SpanAveraging) -> Result<f64> {
    let spec = handle.spec();
    if spec.name != dataset.spec.name || spec.problem_type != dataset.spec.problem_type {
        return Err(Error::TaskMismatch {
            model: spec.name.clone(),
            dataset: dataset.spec.name.clone(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("dataset is empty".into()));
    }
    if spec.problem_type == ProblemType::SequenceLabel {
        let (gold, pred) = entity_spans(handle, dataset)?;
        return match averaging {
            SpanAveraging::Macro => span_macro_f1(&gold, &pred),
            SpanAveraging::Micro => span_micro_f1(&gold, &pred),
        };
    }

    let target = stance_target(handle, dataset);
    let texts: Vec<&str> = dataset.texts.iter().map(String::as_str).collect();
    let predictions = predict_batch_with_target(handle, &texts, target.as_deref())?;
    let index_of = |label: &str| {
        dataset
            .label_map
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Precondition(format!("model label `{label}` is not in the dataset mapping")))
    };
    let n = dataset.label_map.len();

    if spec.problem_type == ProblemType::MultiLabel {
        let gold: Vec<Vec<usize>> = dataset
            .gold
            .iter()
            .map(|g| match g {
                Gold::Labels(v) => Ok(v.clone()),
                _ => Err(Error::Precondition("multi-label task needs label-set gold".into())),
            })
            .collect::<Result<_>>()?;
        let pred: Vec<Vec<usize>> = predictions
            .iter()
            .map(|p| p.labels().into_iter().map(index_of).collect())
            .collect::<Result<_>>()?;
        return multilabel_macro_f1(&gold, &pred, n);
    }

    let gold: Vec<usize> = dataset
        .gold
        .iter()
        .map(|g| match g {
            Gold::Class(c) => Ok(*c),
            _ => Err(Error::Precondition("single-label task needs class gold".into())),
        })
        .collect::<Result<_>>()?;
    let pred: Vec<usize> = predictions
        .iter()
        .map(|p| index_of(p.label().unwrap_or_default()))
        .collect::<Result<_>>()?;
    match spec.metric {
        Metric::MacroF1 => macro_f1(&gold, &pred, n),
        Metric::F1OfClass(k) => f1_of_class(&gold, &pred, k),
        Metric::MacroRecall => macro_recall(&gold, &pred, n),
        Metric::AvgFTwoClasses(a, b) => avg_f_of_classes(&gold, &pred, &[a, b]),
        other => Err(Error::Precondition(format!(
            "metric {other:?} does not apply to single-label predictions"
        ))),
    }
}

/// The dataset's target, else whichever head the handle serves by default.
fn stance_target(handle: &ModelHandle, dataset: &LabeledDataset) -> Option<String> {
    if !handle.spec().needs_target {
        return None;
    }
    if let Some(t) = &dataset.target {
        return Some(t.clone());
    }
    match handle.backend() {
        Backend::PerTarget(heads) => match (&heads.generic, heads.by_target.len()) {
            (None, 1) => heads.by_target.keys().next().cloned(),
            _ => Some("*".into()),
        },
        _ => Some("*".into()),
    }
}

fn entity_spans(handle: &ModelHandle, dataset: &LabeledDataset) -> Result<(Vec<Vec<EntitySpan>>, Vec<Vec<EntitySpan>>)> {
    let mut gold = Vec::with_capacity(dataset.len());
    let mut pred = Vec::with_capacity(dataset.len());
    for (i, text) in dataset.texts.iter().enumerate() {
        let tags = dataset
            .tag_strings(i)
            .ok_or_else(|| Error::Precondition("sequence task needs tag gold".into()))?;
        let tokens = match &dataset.tokens {
            Some(t) => t[i].clone(),
            None => whitespace_tokens(text),
        };
        let seq = TagSequence::new(tokens, tags)?;
        gold.push(decode_bio(text, &seq, &dataset.spec.labels)?);
        pred.push(extract_entities(handle, text)?);
    }
    Ok((gold, pred))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSimilarityResult {
    pub spearman: f64,
    pub used: usize,
    /// Pairs skipped because a word had no vector.
    pub dropped: usize,
}

/// Spearman correlation between table cosines and gold similarity scores.
pub fn evaluate_word_similarity(table: &WordTable, pairs: &[(String, String, f64)]) -> Result<WordSimilarityResult> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput("no word pairs".into()));
    }
    let mut model = Vec::new();
    let mut gold = Vec::new();
    let mut dropped = 0;
    for (a, b, g) in pairs {
        match table.word_similarity(a, b) {
            Ok(c) => {
                model.push(c);
                gold.push(*g);
            }
            Err(Error::OutOfVocabulary(_) | Error::ZeroVector) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(WordSimilarityResult {
        spearman: spearman(&model, &gold)?,
        used: model.len(),
        dropped,
    })
}

/// Spearman correlation between raw tweet cosines and gold scores.
pub fn evaluate_sts(encoder: &TweetEncoder, pairs: &[(String, String, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput("no sentence pairs".into()));
    }
    let mut model = Vec::with_capacity(pairs.len());
    for (a, b, _) in pairs {
        model.push(encoder.embed(a)?.cosine(&encoder.embed(b)?)?);
    }
    let gold: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    spearman(&model, &gold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub per_set: Vec<f64>,
    pub mean: f64,
    pub search_space: usize,
}

/// Accuracy@1 of each set of `(tweet, reply)` pairs, retrieving from the
/// whole `search_space` of replies, plus the mean over sets. Every reply
/// must occur in the search space; the first occurrence is the gold item.
pub fn evaluate_retrieval_sets(
    encoder: &TweetEncoder,
    sets: &[Vec<(String, String)>],
    search_space: &[String],
) -> Result<RetrievalReport> {
    if sets.is_empty() || sets.iter().any(Vec::is_empty) {
        return Err(Error::Precondition("retrieval sets must be non-empty".into()));
    }
    let mut position = std::collections::HashMap::new();
    for (i, r) in search_space.iter().enumerate() {
        position.entry(r.as_str()).or_insert(i);
    }
    let space: Vec<Vec<f64>> = search_space
        .iter()
        .map(|r| encoder.embed(r).map(|v| v.into_values()))
        .collect::<Result<_>>()?;
    let mut per_set = Vec::with_capacity(sets.len());
    for set in sets {
        let mut queries = Vec::with_capacity(set.len());
        let mut gold = Vec::with_capacity(set.len());
        for (tweet, reply) in set {
            let g = *position
                .get(reply.as_str())
                .ok_or_else(|| Error::Precondition(format!("reply `{reply}` is not in the search space")))?;
            queries.push(encoder.embed(tweet)?.into_values());
            gold.push(g);
        }
        per_set.push(crate::embeddings::retrieval_accuracy(&queries, &gold, &space)?);
    }
    let mean = per_set.iter().sum::<f64>() / per_set.len() as f64;
    Ok(RetrievalReport {
        per_set,
        mean,
        search_space: search_space.len(),
    })
}
