//! Named entity recognition: BIO decoding into character spans.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Token};
use crate::classification::{argmax, softmax};
use crate::error::{Error, Result};
use crate::preprocessing::normalize_text;
use crate::registry::{ModelHandle, ProblemType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    /// Inclusive character offset.
    pub start: usize,
    /// Exclusive character offset.
    pub end: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagSequence {
    pub tokens: Vec<Token>,
    pub tags: Vec<String>,
    pub confidences: Vec<f64>,
}

impl TagSequence {
    /// Tags with full confidence.
    pub fn new(tokens: Vec<Token>, tags: Vec<String>) -> Result<Self> {
        let confidences = vec![1.0; tags.len()];
        Self::with_confidences(tokens, tags, confidences)
    }

    pub fn with_confidences(tokens: Vec<Token>, tags: Vec<String>, confidences: Vec<f64>) -> Result<Self> {
        if tokens.len() != tags.len() || tags.len() != confidences.len() {
            return Err(Error::LengthMismatch {
                left: tokens.len(),
                right: tags.len(),
            });
        }
        Ok(Self {
            tokens,
            tags,
            confidences,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag<'a>(tag: &'a str, types: &[String]) -> Result<Bio<'a>> {
    if tag == "O" {
        return Ok(Bio::Outside);
    }
    let (bio, ty) = if let Some(ty) = tag.strip_prefix("B-") {
        (Bio::Begin(ty), ty)
    } else if let Some(ty) = tag.strip_prefix("I-") {
        (Bio::Inside(ty), ty)
    } else {
        return Err(Error::MalformedTags(format!("`{tag}` is not a BIO tag")));
    };
    if !types.iter().any(|t| t == ty) {
        return Err(Error::MalformedTags(format!("unknown entity type `{ty}`")));
    }
    Ok(bio)
}

/// Applies the repair rules: an `I-t` that does not continue a `t` entity
/// becomes `B-t`. Returns the repaired tags and the number of repairs.
pub fn repair_tags(tags: &[String], types: &[String]) -> Result<(Vec<String>, usize)> {
    let mut out = Vec::with_capacity(tags.len());
    let mut repairs = 0;
    let mut previous: Option<&str> = None;
    for tag in tags {
        match parse_tag(tag, types)? {
            Bio::Outside => {
                previous = None;
                out.push(tag.clone());
            }
            Bio::Begin(ty) => {
                previous = Some(ty);
                out.push(tag.clone());
            }
            Bio::Inside(ty) => {
                if previous != Some(ty) {
                    repairs += 1;
                    out.push(format!("B-{ty}"));
                } else {
                    out.push(tag.clone());
                }
                previous = Some(ty);
            }
        }
    }
    Ok((out, repairs))
}

/// Decodes maximal `B-t (I-t)*` runs into spans over `text`.
///
/// `types` is the model's entity-type list; a tag naming any other type is malformed.
pub fn decode_bio(text: &str, seq: &TagSequence, types: &[String]) -> Result<Vec<EntitySpan>> {
    let (tags, _) = repair_tags(&seq.tags, types)?;
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    // (type, first token, last token)
    let mut open: Option<(String, usize, usize)> = None;
    let close = |open: &mut Option<(String, usize, usize)>, spans: &mut Vec<EntitySpan>| -> Result<()> {
        if let Some((ty, first, last)) = open.take() {
            let start = seq.tokens[first].start;
            let end = seq.tokens[last].end;
            if start >= end || end > chars.len() {
                return Err(Error::MalformedTags(format!(
                    "token span {start}..{end} outside text of {} chars",
                    chars.len()
                )));
            }
            let confidence = seq.confidences[first..=last].iter().sum::<f64>() / (last - first + 1) as f64;
            spans.push(EntitySpan {
                surface: chars[start..end].iter().collect(),
                entity_type: ty,
                start,
                end,
                confidence,
            });
        }
        Ok(())
    };
    for (i, tag) in tags.iter().enumerate() {
        match parse_tag(tag, types)? {
            Bio::Outside => close(&mut open, &mut spans)?,
            Bio::Begin(ty) => {
                close(&mut open, &mut spans)?;
                open = Some((ty.to_string(), i, i));
            }
            Bio::Inside(_) => {
                if let Some(o) = open.as_mut() {
                    o.2 = i;
                }
            }
        }
    }
    close(&mut open, &mut spans)?;
    Ok(spans)
}

/// Inverse of [`decode_bio`]: tags `tokens` so that each span's tokens form one run.
/// Spans must align with token boundaries.
pub fn encode_bio(tokens: &[Token], spans: &[EntitySpan]) -> Result<Vec<String>> {
    let mut tags = vec!["O".to_string(); tokens.len()];
    for span in spans {
        let first = tokens.iter().position(|t| t.start == span.start);
        let last = tokens.iter().position(|t| t.end == span.end);
        match (first, last) {
            (Some(f), Some(l)) if f <= l => {
                tags[f] = format!("B-{}", span.entity_type);
                for tag in &mut tags[f + 1..=l] {
                    *tag = format!("I-{}", span.entity_type);
                }
            }
            _ => {
                return Err(Error::MalformedTags(format!(
                    "span {}..{} does not align with tokens",
                    span.start, span.end
                )))
            }
        }
    }
    Ok(tags)
}

/// Finds entities in `text`. Offsets refer to `text` after NFC composition.
///
/// The model sees the normalized text; spans covering a placeholder are
/// widened to the handle or URL it replaced.
pub fn extract_entities(handle: &ModelHandle, text: &str) -> Result<Vec<EntitySpan>> {
    let actual = handle.spec().problem_type;
    if actual != ProblemType::SequenceLabel {
        return Err(Error::WrongProblemType {
            expected: ProblemType::SequenceLabel,
            actual,
        });
    }
    let Backend::Tagger(tagger) = handle.backend() else {
        return Err(Error::Precondition("backend is not a tagger".into()));
    };
    let normalized = normalize_text(text)?;
    let output = tagger.tag_logits(&normalized.text)?;
    if output.tokens.len() != output.logits.len() {
        return Err(Error::Encoder("tagger returned misaligned logits".into()));
    }
    let tag_names = tagger.tags();
    let mut tags = Vec::with_capacity(output.tokens.len());
    let mut confidences = Vec::with_capacity(output.tokens.len());
    for row in &output.logits {
        if row.len() != tag_names.len() {
            return Err(Error::Encoder(format!(
                "tagger returned {} logits for {} tags",
                row.len(),
                tag_names.len()
            )));
        }
        let probs = softmax(row);
        let best = argmax(&probs);
        tags.push(tag_names[best].clone());
        confidences.push(probs[best]);
    }
    let seq = TagSequence::with_confidences(output.tokens, tags, confidences)?;
    let spans = decode_bio(&normalized.text, &seq, &handle.spec().labels)?;

    let source = normalized.reconstruct();
    let source_chars: Vec<char> = source.chars().collect();
    let mut mapped: Vec<EntitySpan> = Vec::with_capacity(spans.len());
    for span in spans {
        let (start, end) = normalized.source_char_span(span.start, span.end);
        if mapped.last().is_some_and(|prev| prev.end > start) {
            // both ends landed inside the same placeholder
            continue;
        }
        mapped.push(EntitySpan {
            surface: source_chars[start..end].iter().collect(),
            start,
            end,
            ..span
        });
    }
    Ok(mapped)
}
