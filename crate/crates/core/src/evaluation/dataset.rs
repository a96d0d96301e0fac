//! Task datasets in the unified on-disk layout.
//!
//! ```text
//! <root>/<task>/mapping.txt          index TAB label
//! <root>/<task>/<split>_text.txt     one text per line
//! <root>/<task>/<split>_labels.txt   label index per line; space-separated
//!                                    indices for multi-label tasks; token TAB
//!                                    tag lines with blank-line sentence breaks
//!                                    for sequence labelling
//! <root>/<task>/target.txt           optional stance target
//! ```
//!
//! Sequence-labelling texts are the sentence tokens joined by single spaces,
//! so no text file is needed for them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::Token;
use crate::error::{Error, Result};
use crate::registry::{bio_tags, entity_types_from_tags, parse_label_map, ProblemType, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    /// File-name stem.
    pub fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Precondition(format!("unknown split `{other}`"))),
        }
    }
}

/// Gold annotation of one example. `Tags` index into the dataset's label map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gold {
    Class(usize),
    Labels(Vec<usize>),
    Tags(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub spec: TaskSpec,
    pub split: Split,
    pub texts: Vec<String>,
    pub gold: Vec<Gold>,
    /// Per-example tokens for sequence labelling.
    pub tokens: Option<Vec<Vec<Token>>>,
    /// Label strings, or BIO tag strings for sequence labelling.
    pub label_map: Vec<String>,
    pub target: Option<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Single-label dataset built in memory.
    pub fn from_classes(spec: &TaskSpec, split: Split, examples: Vec<(String, usize)>) -> Result<Self> {
        let (texts, gold) = examples.into_iter().map(|(t, c)| (t, Gold::Class(c))).unzip();
        Self::from_parts(spec, split, texts, gold, None)
    }

    /// Sequence-labelling dataset from `(token, tag)` sentences.
    pub fn from_tagged(spec: &TaskSpec, split: Split, sentences: Vec<Vec<(String, String)>>) -> Result<Self> {
        let label_map = bio_tags(&spec.labels);
        let mut texts = Vec::new();
        let mut gold = Vec::new();
        let mut tokens = Vec::new();
        for sentence in sentences {
            let (toks, text) = tokens_from_words(sentence.iter().map(|(w, _)| w.as_str()));
            let tags = sentence
                .iter()
                .map(|(_, t)| {
                    label_map
                        .iter()
                        .position(|l| l == t)
                        .ok_or_else(|| Error::MalformedTags(format!("unknown tag `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            texts.push(text);
            gold.push(Gold::Tags(tags));
            tokens.push(toks);
        }
        let mut ds = Self::from_parts(spec, split, texts, gold, Some(label_map))?;
        ds.tokens = Some(tokens);
        Ok(ds)
    }

    /// Builds a dataset whose label map is the task's own labels (or BIO tags).
    pub fn from_parts(
        spec: &TaskSpec,
        split: Split,
        texts: Vec<String>,
        gold: Vec<Gold>,
        label_map: Option<Vec<String>>,
    ) -> Result<Self> {
        if texts.len() != gold.len() {
            return Err(Error::LengthMismatch {
                left: texts.len(),
                right: gold.len(),
            });
        }
        let label_map = label_map.unwrap_or_else(|| match spec.problem_type {
            ProblemType::SequenceLabel => bio_tags(&spec.labels),
            _ => spec.labels.clone(),
        });
        let n = label_map.len();
        let in_range = |g: &Gold| match g {
            Gold::Class(c) => *c < n,
            Gold::Labels(v) | Gold::Tags(v) => v.iter().all(|c| *c < n),
        };
        if let Some(i) = gold.iter().position(|g| !in_range(g)) {
            return Err(Error::Precondition(format!("gold of example {i} is outside the label map")));
        }
        Ok(Self {
            spec: spec.clone(),
            split,
            texts,
            gold,
            tokens: None,
            label_map,
            target: None,
        })
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }

    /// Gold tag strings of example `i`.
    pub fn tag_strings(&self, i: usize) -> Option<Vec<String>> {
        match &self.gold[i] {
            Gold::Tags(t) => Some(t.iter().map(|&x| self.label_map[x].clone()).collect()),
            _ => None,
        }
    }

    /// Writes the dataset in the unified layout under `root`.
    pub fn write(&self, root: impl AsRef<Path>) -> Result<()> {
        let dir = root.as_ref().join(&self.spec.name);
        fs::create_dir_all(&dir)?;
        let mapping: String = self
            .label_map
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}\t{l}\n"))
            .collect();
        fs::write(dir.join("mapping.txt"), mapping)?;
        if let Some(t) = &self.target {
            fs::write(dir.join("target.txt"), format!("{t}\n"))?;
        }
        let stem = self.split.stem();
        let mut labels = String::new();
        for (i, g) in self.gold.iter().enumerate() {
            match g {
                Gold::Class(c) => labels.push_str(&format!("{c}\n")),
                Gold::Labels(v) => {
                    let parts: Vec<String> = v.iter().map(usize::to_string).collect();
                    labels.push_str(&parts.join(" "));
                    labels.push('\n');
                }
                Gold::Tags(tags) => {
                    let tokens = self
                        .tokens
                        .as_ref()
                        .map(|t| t[i].clone())
                        .ok_or_else(|| Error::Precondition("tagged dataset has no tokens".into()))?;
                    for (tok, tag) in tokens.iter().zip(tags) {
                        labels.push_str(&format!("{}\t{}\n", tok.surface, self.label_map[*tag]));
                    }
                    labels.push('\n');
                }
            }
        }
        fs::write(dir.join(format!("{stem}_labels.txt")), labels)?;
        if self.spec.problem_type != ProblemType::SequenceLabel {
            let texts: String = self.texts.iter().map(|t| format!("{t}\n")).collect();
            fs::write(dir.join(format!("{stem}_text.txt")), texts)?;
        }
        Ok(())
    }
}

fn tokens_from_words<'a>(words: impl Iterator<Item = &'a str>) -> (Vec<Token>, String) {
    let mut text = String::new();
    let mut tokens = Vec::new();
    let mut offset = 0;
    for w in words {
        if !text.is_empty() {
            text.push(' ');
            offset += 1;
        }
        let len = w.chars().count();
        tokens.push(Token {
            surface: w.to_string(),
            start: offset,
            end: offset + len,
        });
        text.push_str(w);
        offset += len;
    }
    (tokens, text)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, 0, e.to_string()))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

fn dataset_file(dir: &Path, split: Split, kind: &str) -> PathBuf {
    let primary = dir.join(format!("{}_{kind}.txt", split.stem()));
    if split == Split::Validation && !primary.exists() {
        let alt = dir.join(format!("validation_{kind}.txt"));
        if alt.exists() {
            return alt;
        }
    }
    primary
}

/// Loads `split` of `spec`'s task from `root/<task>/`.
pub fn load_dataset(spec: &TaskSpec, split: Split, root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = root.as_ref().join(&spec.name);
    let mapping_path = dir.join("mapping.txt");
    let mapping_text = fs::read_to_string(&mapping_path).map_err(|e| Error::format(&mapping_path, 0, e.to_string()))?;
    let label_map = parse_label_map(&mapping_text).map_err(|(line, msg)| Error::format(&mapping_path, line, msg))?;
    check_label_map(spec, &label_map, &mapping_path)?;
    let target = fs::read_to_string(dir.join("target.txt"))
        .ok()
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty());

    let labels_path = dataset_file(&dir, split, "labels");
    let label_lines = read_lines(&labels_path)?;
    let n = label_map.len();

    let mut ds = if spec.problem_type == ProblemType::SequenceLabel {
        let mut sentences: Vec<Vec<(String, usize)>> = Vec::new();
        let mut current = Vec::new();
        for (i, line) in label_lines.iter().enumerate() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    sentences.push(std::mem::take(&mut current));
                }
                continue;
            }
            let (tok, tag) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(&labels_path, i + 1, "expected `token<TAB>tag`"))?;
            let tag_id = label_map
                .iter()
                .position(|l| l == tag.trim())
                .ok_or_else(|| Error::format(&labels_path, i + 1, format!("unknown tag `{tag}`")))?;
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::format(&labels_path, i + 1, "token is empty or contains whitespace"));
            }
            current.push((tok.to_string(), tag_id));
        }
        if !current.is_empty() {
            sentences.push(current);
        }
        let mut texts = Vec::new();
        let mut gold = Vec::new();
        let mut tokens = Vec::new();
        for s in sentences {
            let (toks, text) = tokens_from_words(s.iter().map(|(w, _)| w.as_str()));
            texts.push(text);
            gold.push(Gold::Tags(s.into_iter().map(|(_, t)| t).collect()));
            tokens.push(toks);
        }
        let mut ds = LabeledDataset::from_parts(spec, split, texts, gold, Some(label_map))?;
        ds.tokens = Some(tokens);
        ds
    } else {
        let text_path = dataset_file(&dir, split, "text");
        let texts = read_lines(&text_path)?;
        if texts.len() != label_lines.len() {
            return Err(Error::LengthMismatch {
                left: texts.len(),
                right: label_lines.len(),
            });
        }
        let mut gold = Vec::with_capacity(texts.len());
        for (i, line) in label_lines.iter().enumerate() {
            let parse = |f: &str| -> Result<usize> {
                let c: usize = f
                    .parse()
                    .map_err(|_| Error::format(&labels_path, i + 1, format!("invalid label `{f}`")))?;
                if c >= n {
                    return Err(Error::format(
                        &labels_path,
                        i + 1,
                        format!("label {c} outside the {n}-label map"),
                    ));
                }
                Ok(c)
            };
            gold.push(match spec.problem_type {
                ProblemType::MultiLabel => {
                    let mut v = line.split_whitespace().map(parse).collect::<Result<Vec<_>>>()?;
                    v.sort_unstable();
                    v.dedup();
                    Gold::Labels(v)
                }
                _ => Gold::Class(parse(line.trim())?),
            });
        }
        LabeledDataset::from_parts(spec, split, texts, gold, Some(label_map))?
    };
    ds.target = target;
    Ok(ds)
}

fn check_label_map(spec: &TaskSpec, map: &[String], path: &Path) -> Result<()> {
    match spec.problem_type {
        ProblemType::SequenceLabel => {
            let types = entity_types_from_tags(map).map_err(|e| Error::format(path, 0, e.to_string()))?;
            if let Some(t) = types.iter().find(|t| !spec.labels.contains(t)) {
                return Err(Error::format(path, 0, format!("entity type `{t}` is not part of `{}`", spec.name)));
            }
            Ok(())
        }
        _ => {
            if let Some(i) = (0..map.len().max(spec.labels.len())).find(|&i| map.get(i) != spec.labels.get(i)) {
                return Err(Error::format(
                    path,
                    i + 1,
                    format!("label map differs from the labels of `{}`", spec.name),
                ));
            }
            Ok(())
        }
    }
}

/// Reads `a TAB b TAB score` records (word similarity and STS data).
pub fn read_scored_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String, f64)>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b, score] = fields[..] else {
            return Err(Error::format(path, i + 1, "expected three tab-separated fields"));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::format(path, i + 1, format!("invalid score `{score}`")))?;
        out.push((a.to_string(), b.to_string(), score));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::builtin_tasks;

    fn spec(name: &str) -> TaskSpec {
        builtin_tasks().into_iter().find(|t| t.name == name).unwrap()
    }

    fn write(dir: &Path, task: &str, files: &[(&str, &str)]) {
        let d = dir.join(task);
        fs::create_dir_all(&d).unwrap();
        for (name, body) in files {
            fs::write(d.join(name), body).unwrap();
        }
    }

    const SENTIMENT_MAP: &str = "0\tnegative\n1\tneutral\n2\tpositive\n";

    #[test]
    fn loads_three_examples() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "sentiment",
            &[
                ("mapping.txt", SENTIMENT_MAP),
                ("test_text.txt", "bad\nmeh\ngood\n"),
                ("test_labels.txt", "0\n1\n2\n"),
            ],
        );
        let ds = load_dataset(&spec("sentiment"), Split::Test, dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.gold, [Gold::Class(0), Gold::Class(1), Gold::Class(2)]);
        assert_eq!(ds.label_map, ["negative", "neutral", "positive"]);
    }

    #[test]
    fn count_mismatch_and_range_errors() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "sentiment",
            &[
                ("mapping.txt", SENTIMENT_MAP),
                ("test_text.txt", "a\nb\nc\n"),
                ("test_labels.txt", "0\n1\n"),
                ("train_text.txt", "a\nb\n"),
                ("train_labels.txt", "0\n5\n"),
            ],
        );
        let s = spec("sentiment");
        assert!(matches!(
            load_dataset(&s, Split::Test, dir.path()),
            Err(Error::LengthMismatch { left: 3, right: 2 })
        ));
        match load_dataset(&s, Split::Train, dir.path()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn multilabel_and_tagged_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let topic = spec("topic");
        let ds = LabeledDataset::from_parts(
            &topic,
            Split::Train,
            vec!["a".into(), "b".into()],
            vec![Gold::Labels(vec![0, 3]), Gold::Labels(vec![])],
            None,
        )
        .unwrap();
        ds.write(dir.path()).unwrap();
        assert_eq!(load_dataset(&topic, Split::Train, dir.path()).unwrap(), ds);

        let ner = spec("ner");
        let tagged = LabeledDataset::from_tagged(
            &ner,
            Split::Validation,
            vec![
                vec![("Elon".into(), "B-person".into()), ("Musk".into(), "I-person".into()), ("tweets".into(), "O".into())],
                vec![("Paris".into(), "B-location".into())],
            ],
        )
        .unwrap();
        tagged.write(dir.path()).unwrap();
        let back = load_dataset(&ner, Split::Validation, dir.path()).unwrap();
        assert_eq!(back, tagged);
        assert_eq!(back.texts[0], "Elon Musk tweets");
        assert_eq!(back.tokens.as_ref().unwrap()[0][1].start, 5);
    }

    #[test]
    fn scored_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ws.tsv");
        fs::write(&p, "cat\tdog\t7.5\nbad line\n").unwrap();
        match read_scored_pairs(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
