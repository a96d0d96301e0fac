//! Task specifications, model cards and the `load` entry point.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, LazyLock};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, TargetHeads};
use crate::error::{Error, Result};

const DEFAULT_MANIFEST: &str = include_str!("../assets/manifest.jsonl");
const LANGUAGES: &str = include_str!("../assets/languages.tsv");

const LABEL_FILES: &[(&str, &str)] = &[
    ("emoji", include_str!("../assets/labels/emoji.txt")),
    ("emotion", include_str!("../assets/labels/emotion.txt")),
    ("hate", include_str!("../assets/labels/hate.txt")),
    ("irony", include_str!("../assets/labels/irony.txt")),
    ("offensive", include_str!("../assets/labels/offensive.txt")),
    ("sentiment", include_str!("../assets/labels/sentiment.txt")),
    ("stance", include_str!("../assets/labels/stance.txt")),
    ("topic", include_str!("../assets/labels/topic.txt")),
    ("ner", include_str!("../assets/labels/ner.txt")),
];

/// Revisions that name a moving target rather than a fixed snapshot.
const FLOATING_REVISIONS: &[&str] = &["latest", "head"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    SingleLabel,
    MultiLabel,
    SequenceLabel,
    MaskFill,
    SentenceEmbed,
}

impl ProblemType {
    pub fn has_labels(self) -> bool {
        matches!(
            self,
            ProblemType::SingleLabel | ProblemType::MultiLabel | ProblemType::SequenceLabel
        )
    }

    pub fn backend_kind(self) -> BackendKind {
        match self {
            ProblemType::SingleLabel | ProblemType::MultiLabel => BackendKind::EncoderClassifier,
            ProblemType::SequenceLabel => BackendKind::EncoderTagger,
            ProblemType::MaskFill => BackendKind::EncoderMlm,
            ProblemType::SentenceEmbed => BackendKind::EncoderEmbedder,
        }
    }
}

/// Official evaluation metric of a task. Class arguments are label indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroF1,
    F1OfClass(usize),
    MacroRecall,
    AvgFTwoClasses(usize, usize),
    MultilabelMacroF1,
    SpanMacroF1,
    Spearman,
    AccuracyAt1,
}

impl Metric {
    /// Short column label used in report tables.
    pub fn abbreviation(&self) -> &'static str {
        match self {
            Metric::MacroF1 | Metric::MultilabelMacroF1 | Metric::SpanMacroF1 => "M-F1",
            Metric::F1OfClass(_) => "F(i)",
            Metric::MacroRecall => "M-Rec",
            Metric::AvgFTwoClasses(..) => "AVG (F)",
            Metric::Spearman => "Spearman",
            Metric::AccuracyAt1 => "Acc@1",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub problem_type: ProblemType,
    pub labels: Vec<String>,
    pub metric: Metric,
    pub needs_target: bool,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        problem_type: ProblemType,
        labels: Vec<String>,
        metric: Metric,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Precondition("task name is empty".into()));
        }
        if problem_type.has_labels() && labels.is_empty() {
            return Err(Error::Precondition(format!("task `{name}` has no labels")));
        }
        let unique: BTreeSet<_> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Precondition(format!(
                "task `{name}` has duplicate labels"
            )));
        }
        let class_in_range = |c: usize| c < labels.len();
        let valid = match metric {
            Metric::F1OfClass(c) => class_in_range(c),
            Metric::AvgFTwoClasses(a, b) => class_in_range(a) && class_in_range(b) && a != b,
            _ => true,
        };
        if !valid {
            return Err(Error::Precondition(format!(
                "metric {metric:?} references a class outside task `{name}`"
            )));
        }
        Ok(Self {
            name,
            problem_type,
            labels,
            metric,
            needs_target: false,
        })
    }

    pub fn requiring_target(mut self) -> Self {
        self.needs_target = true;
        self
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Parses a label-index file: `index TAB label` per line, indices 0..n in order.
pub fn parse_label_map(text: &str) -> std::result::Result<Vec<String>, (usize, String)> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (index, label) = line
            .split_once('\t')
            .ok_or_else(|| (i + 1, "expected `index<TAB>label`".to_string()))?;
        let index: usize = index
            .trim()
            .parse()
            .map_err(|_| (i + 1, format!("invalid index `{index}`")))?;
        if index != labels.len() {
            return Err((i + 1, format!("expected index {}, found {index}", labels.len())));
        }
        labels.push(label.trim().to_string());
    }
    Ok(labels)
}

/// Entity types named by a BIO tag list, in first-seen order.
pub fn entity_types_from_tags(tags: &[String]) -> Result<Vec<String>> {
    let mut types: Vec<String> = Vec::new();
    for tag in tags {
        if tag == "O" {
            continue;
        }
        let ty = tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .ok_or_else(|| Error::MalformedTags(format!("`{tag}` is not a BIO tag")))?;
        if !types.iter().any(|t| t == ty) {
            types.push(ty.to_string());
        }
    }
    Ok(types)
}

/// `B-t`, `I-t` for every type, then `O`.
pub fn bio_tags(types: &[String]) -> Vec<String> {
    types
        .iter()
        .flat_map(|t| [format!("B-{t}"), format!("I-{t}")])
        .chain(std::iter::once("O".to_string()))
        .collect()
}

fn builtin_label_file(task: &str) -> Vec<String> {
    let text = LABEL_FILES
        .iter()
        .find(|(name, _)| *name == task)
        .map(|(_, text)| *text)
        .expect("bundled label file");
    parse_label_map(text).expect("bundled label file parses")
}

/// BIO tag list of the bundled NER label file.
pub fn builtin_ner_tags() -> Vec<String> {
    builtin_label_file("ner")
}

/// The nine benchmark tasks, in report column order.
pub fn builtin_tasks() -> Vec<TaskSpec> {
    use Metric::*;
    use ProblemType::*;
    let single = |name: &str, metric: Metric| {
        TaskSpec::new(name, SingleLabel, builtin_label_file(name), metric).expect("builtin task")
    };
    let ner_types = entity_types_from_tags(&builtin_ner_tags()).expect("bundled NER tags");
    let stance = builtin_label_file("stance");
    let favor = stance.iter().position(|l| l == "favor").expect("favor label");
    let against = stance.iter().position(|l| l == "against").expect("against label");
    vec![
        single("emoji", MacroF1),
        single("emotion", MacroF1),
        single("hate", MacroF1),
        single("irony", F1OfClass(1)),
        single("offensive", MacroF1),
        single("sentiment", MacroRecall),
        single("stance", AvgFTwoClasses(favor, against)).requiring_target(),
        TaskSpec::new("topic", MultiLabel, builtin_label_file("topic"), MultilabelMacroF1)
            .expect("builtin task"),
        TaskSpec::new("ner", SequenceLabel, ner_types, SpanMacroF1).expect("builtin task"),
    ]
}

/// Model-only capabilities that are loadable but not benchmark tasks.
pub fn auxiliary_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new("language_model", ProblemType::MaskFill, vec![], Metric::AccuracyAt1)
            .expect("builtin task"),
        TaskSpec::new(
            "sentence_embedding",
            ProblemType::SentenceEmbed,
            vec![],
            Metric::AccuracyAt1,
        )
        .expect("builtin task"),
    ]
}

static SUPPORTED_LANGUAGES: LazyLock<Vec<(String, String)>> = LazyLock::new(|| {
    LANGUAGES
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(c, n)| (c.to_string(), n.to_string()))
        .collect()
});

/// Non-English languages covered by the multilingual sentiment model: `(code, name)`.
pub fn multilingual_languages() -> &'static [(String, String)] {
    &SUPPORTED_LANGUAGES
}

/// Lower-cased primary subtag of a BCP-47 code (`es-MX` -> `es`).
pub fn primary_language(code: &str) -> String {
    code.split(['-', '_'])
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageScope {
    English,
    Multilingual(Vec<String>),
}

impl LanguageScope {
    pub fn covers(&self, code: &str) -> bool {
        let code = primary_language(code);
        match self {
            LanguageScope::English => code == "en",
            LanguageScope::Multilingual(codes) => codes.iter().any(|c| primary_language(c) == code),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    EncoderClassifier,
    EncoderTagger,
    EncoderMlm,
    EncoderEmbedder,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub task: String,
    pub language_scope: LanguageScope,
    pub source_uri: String,
    pub revision: String,
    pub backend_kind: BackendKind,
    /// Stance target served by this checkpoint; `None` for target-generic cards.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl ModelCard {
    pub fn new(task: &TaskSpec, source_uri: impl Into<String>, revision: impl Into<String>) -> Self {
        Self {
            task: task.name.clone(),
            language_scope: LanguageScope::English,
            source_uri: source_uri.into(),
            revision: revision.into(),
            backend_kind: task.problem_type.backend_kind(),
            target: None,
        }
    }

    pub fn with_scope(mut self, scope: LanguageScope) -> Self {
        self.language_scope = scope;
        self
    }

    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into().to_lowercase());
        self
    }

    /// URI scheme (`hf`, `native`, `stub`, ...); paths without one are `file`.
    pub fn scheme(&self) -> &str {
        uri_scheme(&self.source_uri)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.source_uri.trim().is_empty() {
            return Err("source_uri is empty".into());
        }
        let rev = self.revision.trim();
        if rev.is_empty() || FLOATING_REVISIONS.contains(&rev.to_ascii_lowercase().as_str()) {
            return Err(format!("revision `{}` is not pinned", self.revision));
        }
        Ok(())
    }
}

pub fn uri_scheme(uri: &str) -> &str {
    match uri.split_once(':') {
        Some((scheme, _)) if !scheme.is_empty() && scheme.len() > 1 => scheme,
        _ => "file",
    }
}

/// Splits `uri@revision`; the revision defaults to `main`.
pub fn split_model_id(model_id: &str) -> (&str, &str) {
    let tail_start = model_id.rfind('/').map_or(0, |i| i + 1);
    match model_id[tail_start..].rfind('@') {
        Some(at) if at > 0 => {
            let at = tail_start + at;
            (&model_id[..at], &model_id[at + 1..])
        }
        _ => (model_id, "main"),
    }
}

/// Parses a manifest: one JSON [`ModelCard`] per line; blank lines and
/// `#` comments are skipped, unknown fields are rejected.
pub fn parse_manifest(text: &str) -> Result<Vec<ModelCard>> {
    let mut cards = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let card: ModelCard = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        card.validate().map_err(|message| Error::Manifest {
            line: i + 1,
            message,
        })?;
        cards.push(card);
    }
    Ok(cards)
}

/// Opens backends for model cards.
pub trait ModelStore: Send + Sync {
    fn open(&self, card: &ModelCard, spec: &TaskSpec) -> Result<Backend>;
}

/// Dispatches to a store by URI scheme.
#[derive(Clone, Default)]
pub struct CompositeStore {
    stores: HashMap<String, Arc<dyn ModelStore>>,
}

impl CompositeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, scheme: &str, store: Arc<dyn ModelStore>) -> Self {
        self.stores.insert(scheme.to_string(), store);
        self
    }
}

impl ModelStore for CompositeStore {
    fn open(&self, card: &ModelCard, spec: &TaskSpec) -> Result<Backend> {
        let store = self.stores.get(card.scheme()).ok_or_else(|| Error::ModelFetch {
            uri: card.source_uri.clone(),
            message: format!("no model store configured for scheme `{}`", card.scheme()),
        })?;
        store.open(card, spec)
    }
}

/// A loaded model. Immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct ModelHandle {
    card: ModelCard,
    spec: TaskSpec,
    backend: Backend,
}

impl ModelHandle {
    /// Checks the backend against the task before wrapping it.
    pub fn new(card: ModelCard, spec: TaskSpec, backend: Backend) -> Result<Self> {
        check_compatible(&spec, &backend)?;
        Ok(Self {
            card,
            spec,
            backend,
        })
    }

    pub fn card(&self) -> &ModelCard {
        &self.card
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn revision(&self) -> &str {
        &self.card.revision
    }
}

fn check_compatible(spec: &TaskSpec, backend: &Backend) -> Result<()> {
    let wrong_kind = || {
        Err(Error::Precondition(format!(
            "a {} backend cannot serve {:?} task `{}`",
            backend.kind_name(),
            spec.problem_type,
            spec.name
        )))
    };
    let check_head = |actual: usize| {
        if actual == spec.labels.len() {
            Ok(())
        } else {
            Err(Error::IncompatibleHead {
                expected: spec.labels.len(),
                actual,
            })
        }
    };
    match (backend, spec.problem_type) {
        (Backend::Classifier(c), ProblemType::SingleLabel | ProblemType::MultiLabel) => {
            check_head(c.num_labels())
        }
        (Backend::PerTarget(heads), ProblemType::SingleLabel) => heads
            .by_target
            .values()
            .chain(heads.generic.as_ref())
            .try_for_each(|(_, c)| check_head(c.num_labels())),
        (Backend::Tagger(t), ProblemType::SequenceLabel) => {
            let expected = 2 * spec.labels.len() + 1;
            if t.tags().len() != expected {
                return Err(Error::IncompatibleHead {
                    expected,
                    actual: t.tags().len(),
                });
            }
            for ty in entity_types_from_tags(t.tags())? {
                if !spec.labels.contains(&ty) {
                    return Err(Error::MalformedTags(format!(
                        "tag type `{ty}` is not an entity type of `{}`",
                        spec.name
                    )));
                }
            }
            Ok(())
        }
        (Backend::MaskFiller(_), ProblemType::MaskFill) => Ok(()),
        (Backend::Encoder(_), ProblemType::SentenceEmbed) => Ok(()),
        _ => wrong_kind(),
    }
}

/// Task and model-card registry.
///
/// Reads take `&self` and are safe to share; registration takes `&mut self`.
#[derive(Clone)]
pub struct Registry {
    tasks: IndexMap<String, TaskSpec>,
    auxiliary: IndexMap<String, TaskSpec>,
    cards: Vec<ModelCard>,
    store: Arc<dyn ModelStore>,
}

impl Registry {
    /// Built-in tasks with no model cards.
    pub fn new(store: Arc<dyn ModelStore>) -> Self {
        Self {
            tasks: builtin_tasks().into_iter().map(|t| (t.name.clone(), t)).collect(),
            auxiliary: auxiliary_tasks()
                .into_iter()
                .map(|t| (t.name.clone(), t))
                .collect(),
            cards: Vec::new(),
            store,
        }
    }

    /// Built-in tasks seeded with the bundled manifest.
    pub fn builtin(store: Arc<dyn ModelStore>) -> Self {
        Self::from_manifest(store, DEFAULT_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn from_manifest(store: Arc<dyn ModelStore>, manifest: &str) -> Result<Self> {
        let mut registry = Self::new(store);
        for card in parse_manifest(manifest)? {
            registry.register_card(card)?;
        }
        Ok(registry)
    }

    pub fn default_manifest() -> &'static str {
        DEFAULT_MANIFEST
    }

    pub fn store(&self) -> &Arc<dyn ModelStore> {
        &self.store
    }

    /// Built-in benchmark tasks followed by user-registered ones.
    pub fn list_tasks(&self) -> Vec<&TaskSpec> {
        self.tasks.values().collect()
    }

    pub fn spec(&self, task: &str) -> Result<&TaskSpec> {
        self.tasks
            .get(task)
            .or_else(|| self.auxiliary.get(task))
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    pub fn register_task(&mut self, spec: TaskSpec) -> Result<()> {
        if self.tasks.contains_key(&spec.name) || self.auxiliary.contains_key(&spec.name) {
            return Err(Error::Precondition(format!(
                "task `{}` is already registered",
                spec.name
            )));
        }
        self.tasks.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn register_card(&mut self, card: ModelCard) -> Result<()> {
        let spec = self.spec(&card.task)?;
        if spec.problem_type.backend_kind() != card.backend_kind {
            return Err(Error::Precondition(format!(
                "card for `{}` declares {:?}, task needs {:?}",
                card.task,
                card.backend_kind,
                spec.problem_type.backend_kind()
            )));
        }
        card.validate().map_err(Error::Precondition)?;
        self.cards.push(card);
        Ok(())
    }

    pub fn cards(&self) -> &[ModelCard] {
        &self.cards
    }

    /// Picks the card serving `task` in `language` (English when absent).
    pub fn resolve_model(&self, task: &str, language: Option<&str>) -> Result<&ModelCard> {
        self.spec(task)?;
        let code = language.map(primary_language).unwrap_or_else(|| "en".into());
        let wanted = code.as_str();
        let covering = |english: bool| {
            self.cards.iter().filter(move |c| {
                c.task == task
                    && (c.language_scope == LanguageScope::English) == english
                    && c.language_scope.covers(wanted)
            })
        };
        let all: Vec<&ModelCard> = covering(true).chain(covering(false)).collect();
        // a target-generic card is the better default when one exists
        all.iter()
            .find(|c| c.target.is_none())
            .or(all.first())
            .copied()
            .ok_or(Error::UnsupportedLanguage {
                task: task.to_string(),
                code,
            })
    }

    /// Loads the default model for `task`, or `model_id` (`uri[@revision]`) when given.
    pub fn load(&self, task: &str, model_id: Option<&str>) -> Result<ModelHandle> {
        let spec = self.spec(task)?;
        match model_id {
            Some(id) => {
                let (uri, revision) = split_model_id(id);
                let card = ModelCard::new(spec, uri, revision);
                card.validate().map_err(Error::Precondition)?;
                self.load_card(&card)
            }
            None => self.load_for_language(task, None),
        }
    }

    /// Loads the card covering `language`. Stance handles bundle every
    /// per-target card of that language.
    pub fn load_for_language(&self, task: &str, language: Option<&str>) -> Result<ModelHandle> {
        let spec = self.spec(task)?;
        let card = self.resolve_model(task, language)?;
        if !spec.needs_target {
            return self.load_card(card);
        }
        let scope = card.language_scope.clone();
        let mut heads = TargetHeads::default();
        for c in self
            .cards
            .iter()
            .filter(|c| c.task == task && c.language_scope == scope)
        {
            let classifier = match self.store.open(c, spec)? {
                Backend::Classifier(classifier) => classifier,
                other => {
                    return Err(Error::Precondition(format!(
                        "stance card `{}` opened as {}",
                        c.source_uri,
                        other.kind_name()
                    )))
                }
            };
            match &c.target {
                Some(t) => {
                    heads.by_target.insert(t.to_lowercase(), (c.clone(), classifier));
                }
                None => heads.generic = Some((c.clone(), classifier)),
            }
        }
        ModelHandle::new(card.clone(), spec.clone(), Backend::PerTarget(Arc::new(heads)))
    }

    pub fn load_card(&self, card: &ModelCard) -> Result<ModelHandle> {
        let spec = self.spec(&card.task)?;
        let backend = self.store.open(card, spec)?;
        let backend = match (spec.needs_target, backend) {
            (true, Backend::Classifier(c)) => {
                let mut heads = TargetHeads::default();
                match &card.target {
                    Some(t) => {
                        heads.by_target.insert(t.to_lowercase(), (card.clone(), c));
                    }
                    None => heads.generic = Some((card.clone(), c)),
                }
                Backend::PerTarget(Arc::new(heads))
            }
            (_, backend) => backend,
        };
        ModelHandle::new(card.clone(), spec.clone(), backend)
    }

    /// Distinct stance targets with a dedicated card.
    pub fn stance_targets(&self) -> BTreeMap<String, &ModelCard> {
        self.cards
            .iter()
            .filter_map(|c| c.target.as_ref().map(|t| (t.clone(), c)))
            .collect()
    }
}
