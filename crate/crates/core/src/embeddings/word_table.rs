//! Static word vectors with optional character n-gram buckets for
//! out-of-vocabulary words.
//!
//! Table file: header `count dim`, then one `word v1 .. vd` row per word.
//! Bucket file: header `bucket_count dim min_n max_n fnv1a64`, then
//! `bucket_id v1 .. vd` rows. Buckets that never appear are zero vectors.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::vector::EmbeddingVector;

pub const BUCKET_HASH: &str = "fnv1a64";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Character n-grams of `<word>` for every n in `min_n..=max_n`.
pub fn char_ngrams(word: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let marked: Vec<char> = format!("<{word}>").chars().collect();
    let mut grams = Vec::new();
    for n in min_n..=max_n.min(marked.len()) {
        for window in marked.windows(n) {
            grams.push(window.iter().collect());
        }
    }
    grams
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubwordBuckets {
    pub bucket_count: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub vectors: HashMap<usize, Vec<f64>>,
}

impl SubwordBuckets {
    pub fn new(bucket_count: usize, min_n: usize, max_n: usize) -> Result<Self> {
        if bucket_count == 0 || min_n == 0 || min_n > max_n {
            return Err(Error::Precondition(format!(
                "invalid bucket layout: {bucket_count} buckets, n-grams {min_n}..={max_n}"
            )));
        }
        Ok(Self {
            bucket_count,
            min_n,
            max_n,
            vectors: HashMap::new(),
        })
    }

    pub fn bucket_of(&self, gram: &str) -> usize {
        (fnv1a64(gram.as_bytes()) % self.bucket_count as u64) as usize
    }

    /// Mean of the bucket vectors of every n-gram of `word`.
    fn compose(&self, word: &str, dim: usize) -> Option<Vec<f64>> {
        let grams = char_ngrams(word, self.min_n, self.max_n);
        if grams.is_empty() {
            return None;
        }
        let mut sum = vec![0.0; dim];
        for g in &grams {
            if let Some(v) = self.vectors.get(&self.bucket_of(g)) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
        }
        let n = grams.len() as f64;
        Some(sum.into_iter().map(|s| s / n).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<EmbeddingVector>,
    buckets: Option<SubwordBuckets>,
}

impl WordTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            buckets: None,
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut iter = pairs.into_iter().peekable();
        let dim = iter
            .peek()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Precondition("empty word table".into()))?;
        let mut table = Self::new(dim);
        for (w, v) in iter {
            table.insert(w, v)?;
        }
        Ok(table)
    }

    /// Adds or replaces a word vector.
    pub fn insert(&mut self, word: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        let word = word.into();
        let v = EmbeddingVector::new(values)?;
        match self.index.get(&word) {
            Some(&i) => self.vectors[i] = v,
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.vectors.push(v);
            }
        }
        Ok(())
    }

    pub fn with_buckets(mut self, buckets: SubwordBuckets) -> Result<Self> {
        if let Some(v) = buckets.vectors.values().find(|v| v.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.buckets = Some(buckets);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn buckets(&self) -> Option<&SubwordBuckets> {
        self.buckets.as_ref()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (count, dim) = match lines.next() {
            Some((_, header)) => parse_table_header(header)
                .ok_or_else(|| Error::format(path, 1, "expected header `count dim`"))?,
            None => return Err(Error::format(path, 1, "empty file")),
        };
        let mut table = Self::new(dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let values = parse_row(fields, dim, path, i + 1)?;
            table
                .insert(word, values)
                .map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        }
        if table.len() != count {
            return Err(Error::format(
                path,
                1,
                format!("header announces {count} words, file has {}", table.len()),
            ));
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, path)
    }

    /// Loads a table plus its companion bucket file.
    pub fn load_with_buckets(path: impl AsRef<Path>, buckets: impl AsRef<Path>) -> Result<Self> {
        let table = Self::load(path)?;
        let buckets_path = buckets.as_ref();
        let parsed = parse_buckets(&fs::read_to_string(buckets_path)?, buckets_path)?;
        if parsed.1 != table.dim {
            return Err(Error::format(
                buckets_path,
                1,
                format!("bucket dimension {} differs from table dimension {}", parsed.1, table.dim),
            ));
        }
        table.with_buckets(parsed.0)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (w, v) in self.words.iter().zip(&self.vectors) {
            write!(out, "{w}")?;
            for x in v.values() {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_buckets(&self, mut out: impl Write) -> Result<()> {
        let Some(b) = &self.buckets else {
            return Err(Error::Precondition("table has no subword buckets".into()));
        };
        writeln!(out, "{} {} {} {} {BUCKET_HASH}", b.bucket_count, self.dim, b.min_n, b.max_n)?;
        let mut ids: Vec<_> = b.vectors.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            write!(out, "{id}")?;
            for x in &b.vectors[&id] {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Stored vector, or the mean of the word's n-gram buckets when it is out of vocabulary.
    pub fn word_vector(&self, word: &str) -> Result<EmbeddingVector> {
        if let Some(&i) = self.index.get(word) {
            return Ok(self.vectors[i].clone());
        }
        self.buckets
            .as_ref()
            .and_then(|b| b.compose(word, self.dim))
            .map(EmbeddingVector::new)
            .transpose()?
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))
    }

    pub fn word_similarity(&self, w1: &str, w2: &str) -> Result<f64> {
        self.word_vector(w1)?.cosine(&self.word_vector(w2)?)
    }

    /// The `k` vocabulary words closest to `word` by cosine, excluding `word`
    /// itself; ties in score are ordered lexicographically. Zero vectors in
    /// the vocabulary are never returned.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let query = self.word_vector(word)?;
        if query.norm() == 0.0 {
            return Err(Error::ZeroVector);
        }
        let others = self.len() - usize::from(self.contains(word));
        if k == 0 || k > others {
            return Err(Error::KTooLarge {
                k,
                available: others,
            });
        }
        let mut scored: Vec<(&String, f64)> = self
            .words
            .iter()
            .zip(&self.vectors)
            .filter(|(w, v)| w.as_str() != word && v.norm() > 0.0)
            .map(|(w, v)| Ok((w, query.cosine(v)?)))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(w, s)| (w.clone(), s))
            .collect())
    }
}

fn parse_table_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let dim: usize = it.next()?.parse().ok()?;
    (it.next().is_none() && dim > 0).then_some((count, dim))
}

fn parse_row<'a>(
    fields: impl Iterator<Item = &'a str>,
    dim: usize,
    path: &Path,
    line: usize,
) -> Result<Vec<f64>> {
    let values: Vec<f64> = fields
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, line, format!("bad number: {e}")))?;
    if values.len() != dim {
        return Err(Error::format(
            path,
            line,
            format!("row has {} values, expected {dim}", values.len()),
        ));
    }
    Ok(values)
}

fn parse_buckets(text: &str, path: &Path) -> Result<(SubwordBuckets, usize)> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l.split_whitespace().collect::<Vec<_>>())
        .unwrap_or_default();
    let bad_header = || {
        Error::format(
            path,
            1,
            format!("expected header `bucket_count dim min_n max_n {BUCKET_HASH}`"),
        )
    };
    if header.len() != 5 || header[4] != BUCKET_HASH {
        return Err(bad_header());
    }
    let nums: Vec<usize> = header[..4]
        .iter()
        .map(|f| f.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad_header())?;
    let (bucket_count, dim, min_n, max_n) = (nums[0], nums[1], nums[2], nums[3]);
    let mut buckets = SubwordBuckets::new(bucket_count, min_n, max_n)
        .map_err(|e| Error::format(path, 1, e.to_string()))?;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|&id| id < bucket_count)
            .ok_or_else(|| Error::format(path, i + 1, "bucket id missing or out of range"))?;
        buckets.vectors.insert(id, parse_row(fields, dim, path, i + 1)?);
    }
    Ok((buckets, dim))
}
