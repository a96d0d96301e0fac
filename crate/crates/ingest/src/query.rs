use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::IngestError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    /// Hashtag or keyword, in the upstream search syntax.
    pub query: String,
    pub start: DateTime<Utc>,
    /// Exclusive.
    pub end: DateTime<Utc>,
    #[serde(default)]
    pub language: Option<String>,
    pub max_results: usize,
}

impl SearchQuery {
    pub fn new(
        query: impl Into<String>,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        language: Option<String>,
        max_results: usize,
    ) -> Result<Self, IngestError> {
        let q = Self {
            query: query.into(),
            start,
            end,
            language,
            max_results,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.query.trim().is_empty() {
            return Err(IngestError::InvalidQuery("query is empty".into()));
        }
        if self.start >= self.end {
            return Err(IngestError::InvalidQuery(format!(
                "start {} is not before end {}",
                self.start, self.end
            )));
        }
        if self.max_results == 0 {
            return Err(IngestError::InvalidQuery("max_results must be at least 1".into()));
        }
        if let Some(lang) = &self.language {
            if lang.is_empty() || !lang.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return Err(IngestError::InvalidQuery(format!("bad language code `{lang}`")));
            }
        }
        Ok(())
    }

    /// Query string sent upstream, with the language operator appended.
    pub fn upstream_query(&self) -> String {
        match &self.language {
            Some(lang) => format!("{} lang:{lang}", self.query.trim()),
            None => self.query.trim().to_string(),
        }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}
