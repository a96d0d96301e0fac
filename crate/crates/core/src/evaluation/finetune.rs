//! Grid search over learning rate and epoch count, selected on validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::native::{NativeConfig, NativeModel, NativeTrainer, Target};
use crate::preprocessing::normalize_text;
use crate::registry::{bio_tags, ModelCard, ModelHandle, ProblemType, TaskSpec};
use crate::stub::{LookupClassifier, LookupTagger};

use super::dataset::{Gold, LabeledDataset};
use super::{score, SpanAveraging};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneGrid {
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for FinetuneGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 2e-5, 5e-5],
            epochs: (1..=10).collect(),
            seeds: vec![0],
        }
    }
}

impl FinetuneGrid {
    pub fn single(learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            learning_rates: vec![learning_rate],
            epochs: vec![epochs],
            seeds: vec![seed],
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.epochs.is_empty() || self.seeds.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return Err(Error::Precondition(format!("learning rate {lr} is not positive")));
        }
        if self.epochs.contains(&0) {
            return Err(Error::Precondition("epoch counts must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.learning_rates.len() * self.epochs.len() * self.seeds.len()
    }
}

/// One grid cell and its validation score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub validation_score: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub handle: ModelHandle,
    pub selected: CellLog,
    pub log: Vec<CellLog>,
}

/// Something that can train a task model from a base checkpoint.
pub trait Finetuner {
    /// Identifies the base model in logs and reports.
    fn base_uri(&self) -> &str;

    /// Trains for `max_epochs`, handing a snapshot to `on_epoch` after each
    /// epoch (numbered from 1).
    fn train(
        &self,
        spec: &TaskSpec,
        train: &LabeledDataset,
        learning_rate: f64,
        max_epochs: usize,
        seed: u64,
        on_epoch: &mut dyn FnMut(usize, ModelHandle) -> Result<()>,
    ) -> Result<()>;
}

/// Runs every grid cell and returns the handle with the best validation
/// score. Epoch counts share one training run per (seed, learning rate).
/// Ties go to the earliest cell in seed, learning-rate, epoch order.
pub fn finetune(
    finetuner: &dyn Finetuner,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    grid: &FinetuneGrid,
) -> Result<FinetuneOutcome> {
    grid.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Precondition("train and validation splits must be non-empty".into()));
    }
    if train.spec.name != validation.spec.name {
        return Err(Error::TaskMismatch {
            model: train.spec.name.clone(),
            dataset: validation.spec.name.clone(),
        });
    }
    let spec = &train.spec;
    let mut checkpoints = grid.epochs.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let max_epochs = *checkpoints.last().expect("validated non-empty");

    let mut log = Vec::with_capacity(grid.cells());
    let mut best: Option<(ModelHandle, CellLog)> = None;
    for &seed in &grid.seeds {
        for &lr in &grid.learning_rates {
            let mut on_epoch = |epoch: usize, handle: ModelHandle| -> Result<()> {
                if checkpoints.binary_search(&epoch).is_err() {
                    return Ok(());
                }
                let s = score(&handle, validation, SpanAveraging::Macro)?;
                let cell = CellLog {
                    learning_rate: lr,
                    epochs: epoch,
                    seed,
                    validation_score: s,
                };
                log::info!("{}: lr={lr} epochs={epoch} seed={seed} validation={s:.4}", spec.name);
                if best.as_ref().is_none_or(|(_, b)| s > b.validation_score) {
                    best = Some((handle, cell.clone()));
                }
                log.push(cell);
                Ok(())
            };
            finetuner.train(spec, train, lr, max_epochs, seed, &mut on_epoch)?;
        }
    }
    let (handle, selected) = best.ok_or(Error::EmptyGrid)?;
    Ok(FinetuneOutcome { handle, selected, log })
}

/// Fine-tunes [`NativeModel`]s.
#[derive(Clone, Debug)]
pub struct NativeFinetuner {
    uri: String,
    base: Option<NativeModel>,
    config: NativeConfig,
    pub batch_size: usize,
}

impl NativeFinetuner {
    /// Randomly initialised encoder built from `config`.
    pub fn new(config: NativeConfig) -> Self {
        Self {
            uri: "native:init".into(),
            base: None,
            config,
            batch_size: 8,
        }
    }

    /// Reuses the encoder of a saved model; each run gets a fresh head.
    pub fn from_model(uri: impl Into<String>, model: NativeModel) -> Self {
        Self {
            uri: uri.into(),
            config: model.config,
            base: Some(model),
            batch_size: 8,
        }
    }

    /// Accepts `native:init`, `native:init?seed=N` or `native:<path>`.
    pub fn from_uri(uri: &str, config: NativeConfig) -> Result<Self> {
        let rest = uri.strip_prefix("native:").ok_or_else(|| Error::ModelFetch {
            uri: uri.into(),
            message: "fine-tuning needs a native: base model".into(),
        })?;
        match rest.strip_prefix("init") {
            Some("") => Ok(Self::new(config)),
            Some(query) => {
                let seed = query
                    .strip_prefix("?seed=")
                    .and_then(|s| s.parse::<u64>().ok())
                    .ok_or_else(|| Error::ModelFetch {
                        uri: uri.into(),
                        message: "expected native:init?seed=N".into(),
                    })?;
                let base = NativeModel::new(config, crate::native::HeadKind::Sequence { multi_label: false }, vec!["_".into()], seed)?;
                Ok(Self::from_model(uri, base))
            }
            None => {
                let model = NativeModel::load(PathBuf::from(rest)).map_err(|e| Error::ModelFetch {
                    uri: uri.into(),
                    message: e.to_string(),
                })?;
                Ok(Self::from_model(uri, model))
            }
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Trains one grid cell and returns the model, e.g. to save the cell
    /// [`finetune`] selected. Same seed, same weights.
    pub fn train_model(
        &self,
        spec: &TaskSpec,
        train: &LabeledDataset,
        learning_rate: f64,
        epochs: usize,
        seed: u64,
    ) -> Result<NativeModel> {
        self.run(spec, train, learning_rate, epochs, seed, &mut |_, _| Ok(()))
    }

    fn run(
        &self,
        spec: &TaskSpec,
        train: &LabeledDataset,
        learning_rate: f64,
        epochs: usize,
        seed: u64,
        on_epoch: &mut dyn FnMut(usize, &NativeModel) -> Result<()>,
    ) -> Result<NativeModel> {
        let model = self.initial(spec, seed)?;
        let data = native_examples(&model, train)?;
        let mut trainer = NativeTrainer::new(model, learning_rate, self.batch_size, seed);
        for epoch in 1..=epochs {
            let loss = trainer.epoch(&data)?;
            log::debug!("{} epoch {epoch}: loss {loss:.5}", spec.name);
            on_epoch(epoch, trainer.model())?;
        }
        Ok(trainer.into_model())
    }

    fn initial(&self, spec: &TaskSpec, seed: u64) -> Result<NativeModel> {
        match &self.base {
            Some(base) => base.with_new_head(spec, seed),
            None => NativeModel::for_task(spec, self.config, seed),
        }
    }
}

/// Training pairs with tag ids translated into the model's output order.
fn native_examples(model: &NativeModel, data: &LabeledDataset) -> Result<Vec<(String, Target)>> {
    let output_of = |label: &str| {
        model
            .outputs
            .iter()
            .position(|o| o == label)
            .ok_or_else(|| Error::Precondition(format!("label `{label}` has no model output")))
    };
    data.texts
        .iter()
        .zip(&data.gold)
        .map(|(text, gold)| {
            let target = match gold {
                Gold::Class(c) => Target::Class(output_of(&data.label_map[*c])?),
                Gold::Labels(v) => Target::Labels(
                    v.iter().map(|&c| output_of(&data.label_map[c])).collect::<Result<_>>()?,
                ),
                Gold::Tags(v) => Target::Tags(
                    v.iter().map(|&c| output_of(&data.label_map[c])).collect::<Result<_>>()?,
                ),
            };
            Ok((text.clone(), target))
        })
        .collect()
}

impl Finetuner for NativeFinetuner {
    fn base_uri(&self) -> &str {
        &self.uri
    }

    fn train(
        &self,
        spec: &TaskSpec,
        train: &LabeledDataset,
        learning_rate: f64,
        max_epochs: usize,
        seed: u64,
        on_epoch: &mut dyn FnMut(usize, ModelHandle) -> Result<()>,
    ) -> Result<()> {
        self.run(spec, train, learning_rate, max_epochs, seed, &mut |epoch, model| {
            let card = ModelCard::new(spec, self.uri.clone(), format!("lr{learning_rate}-e{epoch}-s{seed}"));
            on_epoch(epoch, ModelHandle::new(card, spec.clone(), model.clone().into_backend())?)
        })
        .map(|_| ())
    }
}

/// Answers with the gold labels of every dataset it was built from. Used to
/// check the evaluation plumbing end to end.
#[derive(Clone, Debug, Default)]
pub struct OracleFinetuner {
    datasets: Vec<LabeledDataset>,
}

impl OracleFinetuner {
    pub fn new<'a>(datasets: impl IntoIterator<Item = &'a LabeledDataset>) -> Self {
        Self {
            datasets: datasets.into_iter().cloned().collect(),
        }
    }

    pub fn add(&mut self, dataset: LabeledDataset) {
        self.datasets.push(dataset);
    }

    /// A handle that predicts gold for every known text of `spec`'s task.
    pub fn oracle_handle(&self, spec: &TaskSpec) -> Result<ModelHandle> {
        let backend = self.backend(spec)?;
        ModelHandle::new(ModelCard::new(spec, "oracle:", "gold"), spec.clone(), backend)
    }

    fn backend(&self, spec: &TaskSpec) -> Result<Backend> {
        let outputs = match spec.problem_type {
            ProblemType::SequenceLabel => bio_tags(&spec.labels),
            ProblemType::SingleLabel | ProblemType::MultiLabel => spec.labels.clone(),
            other => return Err(Error::Precondition(format!("no oracle for {other:?} tasks"))),
        };
        let mut classifier = LookupClassifier::new(outputs.len());
        let mut tagger = LookupTagger::new(if spec.problem_type == ProblemType::SequenceLabel {
            outputs.clone()
        } else {
            vec!["O".into()]
        });
        for ds in self.datasets.iter().filter(|d| d.spec.name == spec.name) {
            let output_of = |c: usize| {
                outputs
                    .iter()
                    .position(|o| *o == ds.label_map[c])
                    .ok_or_else(|| Error::Precondition(format!("label `{}` unknown to the task", ds.label_map[c])))
            };
            for (text, gold) in ds.texts.iter().zip(&ds.gold) {
                let key = normalize_text(text)?.text;
                match gold {
                    Gold::Class(c) => {
                        let mut logits = vec![0.0; outputs.len()];
                        logits[output_of(*c)?] = 10.0;
                        classifier.insert(key, logits);
                    }
                    Gold::Labels(v) => {
                        let mut logits = vec![-10.0; outputs.len()];
                        for &c in v {
                            logits[output_of(c)?] = 10.0;
                        }
                        classifier.insert(key, logits);
                    }
                    Gold::Tags(v) => {
                        tagger.insert(key, v.iter().map(|&c| output_of(c)).collect::<Result<_>>()?);
                    }
                }
            }
        }
        Ok(match spec.problem_type {
            ProblemType::SequenceLabel => Backend::tagger(tagger),
            _ => Backend::classifier(classifier),
        })
    }
}

impl Finetuner for OracleFinetuner {
    fn base_uri(&self) -> &str {
        "oracle:"
    }

    fn train(
        &self,
        spec: &TaskSpec,
        _train: &LabeledDataset,
        _learning_rate: f64,
        max_epochs: usize,
        _seed: u64,
        on_epoch: &mut dyn FnMut(usize, ModelHandle) -> Result<()>,
    ) -> Result<()> {
        let handle = self.oracle_handle(spec)?;
        for epoch in 1..=max_epochs {
            on_epoch(epoch, handle.clone())?;
        }
        Ok(())
    }
}
