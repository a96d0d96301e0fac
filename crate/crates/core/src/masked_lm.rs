//! Top-k masked-word prediction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::classification::softmax;
use crate::error::{Error, Result};
use crate::preprocessing::{normalize_text, validate_mask_input};
use crate::registry::{ModelHandle, ProblemType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPrediction {
    pub mask_index: usize,
    pub candidates: Vec<Candidate>,
}

/// Vocabulary items never offered as candidates, on top of the backend's
/// special tokens and whitespace-only items.
#[derive(Clone, Debug, Default)]
pub struct CandidateFilter {
    pub blocked: HashSet<String>,
}

impl CandidateFilter {
    pub fn blocking<I: IntoIterator<Item = S>, S: Into<String>>(items: I) -> Self {
        Self {
            blocked: items.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn predict_mask(handle: &ModelHandle, text: &str, k: usize) -> Result<Vec<MaskPrediction>> {
    predict_mask_with(handle, text, k, &CandidateFilter::default())
}

/// Ranks the `k` most probable vocabulary items for every mask, each mask
/// predicted independently of the others.
pub fn predict_mask_with(
    handle: &ModelHandle,
    text: &str,
    k: usize,
    filter: &CandidateFilter,
) -> Result<Vec<MaskPrediction>> {
    let actual = handle.spec().problem_type;
    if actual != ProblemType::MaskFill {
        return Err(Error::WrongProblemType {
            expected: ProblemType::MaskFill,
            actual,
        });
    }
    let Backend::MaskFiller(model) = handle.backend() else {
        return Err(Error::Precondition("backend is not a mask filler".into()));
    };
    let normalized = normalize_text(text)?;
    let masks = validate_mask_input(&normalized.text, model.mask_token())?;
    let vocab = model.vocab();
    if k == 0 || k > vocab.len() {
        return Err(Error::KTooLarge {
            k,
            available: vocab.len(),
        });
    }
    let eligible: Vec<usize> = (0..vocab.len())
        .filter(|&id| {
            !model.is_special(id)
                && !vocab[id].trim().is_empty()
                && !filter.blocked.contains(&vocab[id])
        })
        .collect();
    if k > eligible.len() {
        return Err(Error::KTooLarge {
            k,
            available: eligible.len(),
        });
    }

    let rows = model.mask_logits(&normalized.text)?;
    if rows.len() != masks {
        return Err(Error::Encoder(format!(
            "backend scored {} masks, text has {masks}",
            rows.len()
        )));
    }
    rows.iter()
        .enumerate()
        .map(|(mask_index, logits)| {
            if logits.len() != vocab.len() {
                return Err(Error::Encoder(format!(
                    "backend returned {} logits for a vocabulary of {}",
                    logits.len(),
                    vocab.len()
                )));
            }
            let probs = softmax(logits);
            let mut ranked = eligible.clone();
            ranked.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            let candidates = ranked[..k]
                .iter()
                .map(|&id| Candidate {
                    token: vocab[id].trim().to_string(),
                    probability: probs[id],
                })
                .collect();
            Ok(MaskPrediction {
                mask_index,
                candidates,
            })
        })
        .collect()
}
