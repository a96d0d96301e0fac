//! Tweet normalization.
//!
//! Handles are replaced by `@user` and scheme-prefixed URLs by `http`, the
//! placeholder convention the released checkpoints were fine-tuned with.
//! Everything else is kept byte-for-byte after Unicode NFC composition, and
//! every replacement is recorded so the source text (and source character
//! offsets) can always be recovered.

use std::ops::Range;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const USER_PLACEHOLDER: &str = "@user";
pub const URL_PLACEHOLDER: &str = "http";

/// Longest handle the platform allows, excluding the `@`.
pub const MAX_HANDLE_LEN: usize = 15;

static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[A-Za-z0-9_]+").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"https?://\S+").unwrap());

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTweet {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

impl RawTweet {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if is_blank(&text) {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            text,
            id: None,
            created_at: None,
            lang: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_created_at(mut self, at: DateTime<Utc>) -> Self {
        self.created_at = Some(at);
        self
    }

    pub fn with_lang(mut self, lang: impl Into<String>) -> Self {
        self.lang = Some(lang.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionKind {
    Mention,
    Url,
}

impl SubstitutionKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            SubstitutionKind::Mention => USER_PLACEHOLDER,
            SubstitutionKind::Url => URL_PLACEHOLDER,
        }
    }
}

/// One replacement. `span` is a byte range into the normalized text,
/// `source_span` the byte range of `original` in the NFC-composed input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub kind: SubstitutionKind,
    pub span: Range<usize>,
    pub source_span: Range<usize>,
    pub original: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedTweet {
    pub text: String,
    pub substitutions: Vec<Substitution>,
}

impl NormalizedTweet {
    /// Rebuilds the NFC-composed source text.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut cursor = 0;
        for sub in &self.substitutions {
            out.push_str(&self.text[cursor..sub.span.start]);
            out.push_str(&sub.original);
            cursor = sub.span.end;
        }
        out.push_str(&self.text[cursor..]);
        out
    }

    /// Maps a character span of the normalized text onto the source text.
    ///
    /// Boundaries falling inside a placeholder snap outwards to the
    /// boundaries of the text it replaced.
    pub fn source_char_span(&self, start: usize, end: usize) -> (usize, usize) {
        (self.map_boundary(start, false), self.map_boundary(end, true))
    }

    fn map_boundary(&self, offset: usize, is_end: bool) -> usize {
        // source chars minus normalized chars over the substitutions passed so far
        let mut delta: isize = 0;
        for sub in &self.substitutions {
            let start = self.text[..sub.span.start].chars().count();
            let len = sub.kind.placeholder().chars().count();
            let source_len = sub.original.chars().count();
            if offset <= start {
                break;
            }
            if offset < start + len {
                let source_start = (start as isize + delta) as usize;
                return if is_end {
                    source_start + source_len
                } else {
                    source_start
                };
            }
            delta += source_len as isize - len as isize;
        }
        (offset as isize + delta) as usize
    }
}

fn is_blank(text: &str) -> bool {
    text.chars().all(char::is_whitespace)
}

fn is_handle_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn preceded_by_handle_char(text: &str, at: usize) -> bool {
    text[..at].chars().next_back().is_some_and(is_handle_char)
}

/// First match of `re` at or after `from` that is not glued to a preceding
/// handle character and passes `accept`.
fn next_match(
    re: &Regex,
    text: &str,
    mut from: usize,
    accept: impl Fn(&regex::Match<'_>) -> bool,
) -> Option<Range<usize>> {
    while let Some(m) = re.find_at(text, from) {
        if !preceded_by_handle_char(text, m.start()) && accept(&m) {
            return Some(m.range());
        }
        from = m.start() + text[m.start()..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

pub fn normalize(tweet: &RawTweet) -> Result<NormalizedTweet> {
    normalize_text(&tweet.text)
}

/// Replaces mentions and URLs with placeholders.
///
/// A mention is `@` plus 1 to 15 handle characters, not preceded or followed by
/// another handle character. A URL is `http://` or `https://` plus at least one
/// non-space character, not preceded by a handle character. Overlapping
/// candidates resolve to the one starting first.
pub fn normalize_text(text: &str) -> Result<NormalizedTweet> {
    let source: String = text.nfc().collect();
    if is_blank(&source) {
        return Err(Error::EmptyInput);
    }

    let mut out = String::with_capacity(source.len());
    let mut substitutions = Vec::new();
    let mut cursor = 0;
    loop {
        let url = next_match(&URL, &source, cursor, |_| true);
        let mention = next_match(&MENTION, &source, cursor, |m| m.len() - 1 <= MAX_HANDLE_LEN);
        let (range, kind) = match (url, mention) {
            (Some(u), Some(m)) if m.start < u.start => (m, SubstitutionKind::Mention),
            (Some(u), _) => (u, SubstitutionKind::Url),
            (None, Some(m)) => (m, SubstitutionKind::Mention),
            (None, None) => break,
        };
        out.push_str(&source[cursor..range.start]);
        cursor = range.end;
        let original = &source[range.clone()];
        let placeholder = kind.placeholder();
        let at = out.len();
        out.push_str(placeholder);
        if original != placeholder {
            substitutions.push(Substitution {
                kind,
                span: at..at + placeholder.len(),
                source_span: range,
                original: original.to_string(),
            });
        }
    }
    out.push_str(&source[cursor..]);

    Ok(NormalizedTweet {
        text: out,
        substitutions,
    })
}

/// Counts occurrences of the backend's mask literal.
pub fn validate_mask_input(text: &str, mask_token: &str) -> Result<usize> {
    if mask_token.is_empty() {
        return Err(Error::Precondition("mask token is empty".into()));
    }
    match text.matches(mask_token).count() {
        0 => Err(Error::NoMaskPresent(mask_token.to_string())),
        n => Ok(n),
    }
}
