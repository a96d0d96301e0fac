//! Small trainable text model: hashed token embeddings, one tanh layer and
//! a linear head over either the pooled text or every token.
//!
//! Serves as the local fine-tuning backend and as the `native:` model store.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backend::{whitespace_tokens, Backend, SequenceClassifier, Token, TokenEncoder, TokenLogits, TokenTagger};
use crate::classification::{logistic, softmax};
use crate::embeddings::word_table::fnv1a64;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::preprocessing::normalize_text;
use crate::registry::{bio_tags, ModelCard, ModelStore, ProblemType, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeConfig {
    pub buckets: usize,
    pub dim: usize,
    /// Weight of each neighbouring token in a token's input.
    pub context_weight: f64,
}

impl Default for NativeConfig {
    fn default() -> Self {
        Self {
            buckets: 8192,
            dim: 48,
            context_weight: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One output row for the whole text, single- or multi-label.
    Sequence { multi_label: bool },
    /// One output row per whitespace token.
    Token,
}

/// Training target for one text.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Labels(Vec<usize>),
    Tags(Vec<usize>),
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    embed: usize,
    proj: usize,
    proj_bias: usize,
    head: usize,
    head_bias: usize,
    total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeModel {
    pub config: NativeConfig,
    pub head: HeadKind,
    /// Label or tag names, one per output.
    pub outputs: Vec<String>,
    params: Vec<f64>,
}

impl NativeModel {
    pub fn new(config: NativeConfig, head: HeadKind, outputs: Vec<String>, seed: u64) -> Result<Self> {
        if config.buckets == 0 || config.dim == 0 || outputs.is_empty() {
            return Err(Error::Precondition("native model needs buckets, dim and outputs".into()));
        }
        let mut model = Self {
            config,
            head,
            outputs,
            params: Vec::new(),
        };
        let l = model.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Normal::new(0.0, 0.1).expect("valid std");
        let dense = Normal::new(0.0, 1.0 / (config.dim as f64).sqrt()).expect("valid std");
        let mut params = vec![0.0; l.total];
        params[l.embed..l.proj].iter_mut().for_each(|p| *p = embed.sample(&mut rng));
        params[l.proj..l.proj_bias].iter_mut().for_each(|p| *p = dense.sample(&mut rng));
        params[l.head..l.head_bias].iter_mut().for_each(|p| *p = 0.1 * dense.sample(&mut rng));
        model.params = params;
        Ok(model)
    }

    /// Fresh model shaped for `spec`.
    pub fn for_task(spec: &TaskSpec, config: NativeConfig, seed: u64) -> Result<Self> {
        let head = match spec.problem_type {
            ProblemType::SingleLabel => HeadKind::Sequence { multi_label: false },
            ProblemType::MultiLabel => HeadKind::Sequence { multi_label: true },
            ProblemType::SequenceLabel => HeadKind::Token,
            other => {
                return Err(Error::Precondition(format!(
                    "native models cannot serve {other:?} tasks"
                )))
            }
        };
        let outputs = match head {
            HeadKind::Token => bio_tags(&spec.labels),
            HeadKind::Sequence { .. } => spec.labels.clone(),
        };
        Self::new(config, head, outputs, seed)
    }

    /// Keeps the encoder weights and attaches a freshly initialised head for `spec`.
    pub fn with_new_head(&self, spec: &TaskSpec, seed: u64) -> Result<Self> {
        let mut fresh = Self::for_task(spec, self.config, seed)?;
        let encoder_len = self.layout().head;
        fresh.params[..encoder_len].copy_from_slice(&self.params[..encoder_len]);
        Ok(fresh)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = serde_json::from_slice(&fs::read(path)?)?;
        if model.params.len() != model.layout().total {
            return Err(Error::Precondition("native model file has the wrong parameter count".into()));
        }
        Ok(model)
    }

    pub fn into_backend(self) -> Backend {
        match self.head {
            HeadKind::Sequence { .. } => Backend::classifier(self),
            HeadKind::Token => Backend::tagger(self),
        }
    }

    fn layout(&self) -> Layout {
        let (b, d, l) = (self.config.buckets, self.config.dim, self.outputs.len());
        let embed = 0;
        let proj = embed + b * d;
        let proj_bias = proj + d * d;
        let head = proj_bias + d;
        let head_bias = head + l * d;
        Layout {
            embed,
            proj,
            proj_bias,
            head,
            head_bias,
            total: head_bias + l,
        }
    }

    fn bucket(&self, surface: &str) -> usize {
        (fnv1a64(surface.to_lowercase().as_bytes()) % self.config.buckets as u64) as usize
    }

    fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.bucket(&t.surface)).collect()
    }

    fn embedding(&self, id: usize) -> &[f64] {
        let d = self.config.dim;
        &self.params[id * d..(id + 1) * d]
    }

    /// Token inputs: own embedding plus weighted neighbours.
    fn token_inputs(&self, ids: &[usize]) -> Vec<Vec<f64>> {
        let c = self.config.context_weight;
        (0..ids.len())
            .map(|t| {
                let mut x = self.embedding(ids[t]).to_vec();
                for n in [t.checked_sub(1), Some(t + 1).filter(|&n| n < ids.len())].into_iter().flatten() {
                    x.iter_mut().zip(self.embedding(ids[n])).for_each(|(xi, e)| *xi += c * e);
                }
                x
            })
            .collect()
    }

    fn pooled_input(&self, ids: &[usize]) -> Vec<f64> {
        let mut x = vec![0.0; self.config.dim];
        for &id in ids {
            x.iter_mut().zip(self.embedding(id)).for_each(|(xi, e)| *xi += e);
        }
        let n = ids.len().max(1) as f64;
        x.into_iter().map(|v| v / n).collect()
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let d = self.config.dim;
        (0..d)
            .map(|i| {
                let row = &self.params[l.proj + i * d..l.proj + (i + 1) * d];
                let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.params[l.proj_bias + i];
                a.tanh()
            })
            .collect()
    }

    fn head_logits(&self, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let d = self.config.dim;
        (0..self.outputs.len())
            .map(|o| {
                let row = &self.params[l.head + o * d..l.head + (o + 1) * d];
                row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + self.params[l.head_bias + o]
            })
            .collect()
    }

    /// Backpropagates `dz` (gradient on the head logits) through head and
    /// tanh layer; returns the gradient on the layer input.
    fn backward_dense(&self, x: &[f64], h: &[f64], dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let l = self.layout();
        let d = self.config.dim;
        let mut dh = vec![0.0; d];
        for (o, g) in dz.iter().enumerate() {
            let base = l.head + o * d;
            for i in 0..d {
                grad[base + i] += g * h[i];
                dh[i] += g * self.params[base + i];
            }
            grad[l.head_bias + o] += g;
        }
        let mut dx = vec![0.0; d];
        for i in 0..d {
            let da = dh[i] * (1.0 - h[i] * h[i]);
            if da == 0.0 {
                continue;
            }
            let base = l.proj + i * d;
            for j in 0..d {
                grad[base + j] += da * x[j];
                dx[j] += da * self.params[base + j];
            }
            grad[l.proj_bias + i] += da;
        }
        dx
    }

    fn add_to_embedding(&self, grad: &mut [f64], id: usize, scale: f64, dx: &[f64]) {
        let d = self.config.dim;
        grad[id * d..(id + 1) * d]
            .iter_mut()
            .zip(dx)
            .for_each(|(g, v)| *g += scale * v);
    }

    /// Loss on one example and its gradient accumulated into `grad`.
    fn accumulate(&self, tokens: &[Token], target: &Target, grad: &mut [f64]) -> Result<f64> {
        let ids = self.ids(tokens);
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        match (self.head, target) {
            (HeadKind::Sequence { multi_label }, target) => {
                let x = self.pooled_input(&ids);
                let h = self.hidden(&x);
                let z = self.head_logits(&h);
                let (loss, dz) = match (multi_label, target) {
                    (false, Target::Class(c)) => {
                        let p = softmax(&z);
                        let mut dz = p.clone();
                        dz[*c] -= 1.0;
                        (-p[*c].max(1e-300).ln(), dz)
                    }
                    (true, Target::Labels(gold)) => {
                        let mut loss = 0.0;
                        let dz: Vec<f64> = z
                            .iter()
                            .enumerate()
                            .map(|(o, &zo)| {
                                let y = if gold.contains(&o) { 1.0 } else { 0.0 };
                                // numerically stable binary cross-entropy on logits
                                loss += zo.max(0.0) - zo * y + (-zo.abs()).exp().ln_1p();
                                logistic(zo) - y
                            })
                            .collect();
                        (loss, dz)
                    }
                    _ => return Err(Error::Precondition("target does not match the model head".into())),
                };
                let dx = self.backward_dense(&x, &h, &dz, grad);
                let n = ids.len() as f64;
                for &id in &ids {
                    self.add_to_embedding(grad, id, 1.0 / n, &dx);
                }
                Ok(loss)
            }
            (HeadKind::Token, Target::Tags(tags)) => {
                if tags.len() != ids.len() {
                    return Err(Error::LengthMismatch {
                        left: ids.len(),
                        right: tags.len(),
                    });
                }
                let inputs = self.token_inputs(&ids);
                let scale = 1.0 / ids.len() as f64;
                let c = self.config.context_weight;
                let mut loss = 0.0;
                for (t, x) in inputs.iter().enumerate() {
                    let h = self.hidden(x);
                    let p = softmax(&self.head_logits(&h));
                    loss -= p[tags[t]].max(1e-300).ln() * scale;
                    let mut dz: Vec<f64> = p.iter().map(|v| v * scale).collect();
                    dz[tags[t]] -= scale;
                    let dx = self.backward_dense(x, &h, &dz, grad);
                    self.add_to_embedding(grad, ids[t], 1.0, &dx);
                    if t > 0 {
                        self.add_to_embedding(grad, ids[t - 1], c, &dx);
                    }
                    if t + 1 < ids.len() {
                        self.add_to_embedding(grad, ids[t + 1], c, &dx);
                    }
                }
                Ok(loss)
            }
            _ => Err(Error::Precondition("target does not match the model head".into())),
        }
    }

    /// Mean loss over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[(String, Target)]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for (text, target) in batch {
            let tokens = whitespace_tokens(&normalize_text(text)?.text);
            total += self.accumulate(&tokens, target, &mut grad)?;
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Mini-batch Adam training over whole epochs.
pub struct NativeTrainer {
    pub model: NativeModel,
    optimizer: Adam,
    rng: ChaCha8Rng,
    pub batch_size: usize,
    steps: usize,
}

impl NativeTrainer {
    pub fn new(model: NativeModel, learning_rate: f64, batch_size: usize, seed: u64) -> Self {
        let optimizer = Adam::new(AdamConfig::with_learning_rate(learning_rate), model.num_params());
        Self {
            model,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_size: batch_size.max(1),
            steps: 0,
        }
    }

    pub fn model(&self) -> &NativeModel {
        &self.model
    }

    pub fn into_model(self) -> NativeModel {
        self.model
    }

    /// One shuffled pass over `data`; returns the mean batch loss.
    pub fn epoch(&mut self, data: &[(String, Target)]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Precondition("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<(String, Target)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grad) = self.model.loss_and_grad(&batch)?;
            self.steps += 1;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedLoss(self.steps));
            }
            self.optimizer.step(self.model.params_mut(), &grad);
            losses += loss;
            batches += 1;
        }
        Ok(losses / batches as f64)
    }
}

impl SequenceClassifier for NativeModel {
    fn num_labels(&self) -> usize {
        self.outputs.len()
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.ids(&whitespace_tokens(text));
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(self.head_logits(&self.hidden(&self.pooled_input(&ids))))
    }
}

impl TokenTagger for NativeModel {
    fn tags(&self) -> &[String] {
        &self.outputs
    }

    fn tag_logits(&self, text: &str) -> Result<TokenLogits> {
        let tokens = whitespace_tokens(text);
        let ids = self.ids(&tokens);
        let logits = self
            .token_inputs(&ids)
            .iter()
            .map(|x| self.head_logits(&self.hidden(x)))
            .collect();
        Ok(TokenLogits { tokens, logits })
    }
}

impl TokenEncoder for NativeModel {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn token_states(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let ids = self.ids(&whitespace_tokens(text));
        Ok(self.token_inputs(&ids).iter().map(|x| self.hidden(x)).collect())
    }
}

/// Opens `native:<path>` model files and `native:init[?seed=N]` fresh models.
#[derive(Clone, Debug, Default)]
pub struct NativeStore {
    pub config: NativeConfig,
}

impl ModelStore for NativeStore {
    fn open(&self, card: &ModelCard, spec: &TaskSpec) -> Result<Backend> {
        let rest = card.source_uri.strip_prefix("native:").ok_or_else(|| Error::ModelFetch {
            uri: card.source_uri.clone(),
            message: "not a native: URI".into(),
        })?;
        let model = match rest.strip_prefix("init") {
            Some(query) => {
                let seed = query
                    .strip_prefix("?seed=")
                    .map(|s| s.parse::<u64>())
                    .transpose()
                    .map_err(|e| Error::ModelFetch {
                        uri: card.source_uri.clone(),
                        message: e.to_string(),
                    })?
                    .unwrap_or(0);
                NativeModel::for_task(spec, self.config, seed)?
            }
            None => NativeModel::load(rest).map_err(|e| Error::ModelFetch {
                uri: card.source_uri.clone(),
                message: e.to_string(),
            })?,
        };
        Ok(model.into_backend())
    }
}
