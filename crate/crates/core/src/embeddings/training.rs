//! Contrastive training of tweet encoders on tweet-reply pairs.

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backend::{word_tokens, TokenEncoder};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::preprocessing::normalize_text;

use super::infonce::{infonce_loss_and_grad, InfoNceOptions, NegativeSet, DEFAULT_TEMPERATURE};
use super::tweet::pair_retrieval_accuracy;
use super::vector::{dot, norm};
use super::word_table::fnv1a64;

/// An encoder whose parameters live in one flat vector and whose
/// output gradient can be pulled back onto them.
pub trait DifferentiableEncoder: Clone + Serialize + DeserializeOwned {
    type Input: Clone + PartialEq + Debug;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn output_dim(&self) -> usize;

    /// Unnormalized output.
    fn forward(&self, input: &Self::Input) -> Result<Vec<f64>>;

    /// Adds d(loss)/d(params) to `grad_params`, given d(loss)/d(output).
    fn backward(&self, input: &Self::Input, grad_output: &[f64], grad_params: &mut [f64]) -> Result<()>;
}

/// `y = W x` with `W` stored row-major (`out_dim x in_dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
}

impl LinearEncoder {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        (0..dim).for_each(|i| weights[i * dim + i] = 1.0);
        Self {
            in_dim: dim,
            out_dim: dim,
            weights,
        }
    }

    pub fn random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("valid std");
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| normal.sample(&mut rng)).collect(),
        }
    }
}

impl DifferentiableEncoder for LinearEncoder {
    type Input = Vec<f64>;

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn output_dim(&self) -> usize {
        self.out_dim
    }

    fn forward(&self, x: &Vec<f64>) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok(self.weights.chunks(self.in_dim).map(|row| dot(row, x)).collect())
    }

    fn backward(&self, x: &Vec<f64>, grad_output: &[f64], grad_params: &mut [f64]) -> Result<()> {
        for (o, g) in grad_output.iter().enumerate() {
            let row = &mut grad_params[o * self.in_dim..(o + 1) * self.in_dim];
            row.iter_mut().zip(x).for_each(|(w, xi)| *w += g * xi);
        }
        Ok(())
    }
}

/// Text encoder: each lowercased word token hashes into one of `buckets`
/// trainable rows; the sentence output is the mean of its token rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagOfWordsEncoder {
    pub buckets: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl BagOfWordsEncoder {
    pub fn random(buckets: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        Self {
            buckets,
            dim,
            weights: (0..buckets * dim).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.to_lowercase().as_bytes()) % self.buckets as u64) as usize
    }

    fn token_buckets(&self, text: &str) -> Result<Vec<usize>> {
        let normalized = normalize_text(text)?;
        let ids: Vec<usize> = word_tokens(&normalized.text)
            .iter()
            .map(|t| self.bucket(&t.surface))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(ids)
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.weights[id * self.dim..(id + 1) * self.dim]
    }
}

impl DifferentiableEncoder for BagOfWordsEncoder {
    type Input = String;

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, text: &String) -> Result<Vec<f64>> {
        let ids = self.token_buckets(text)?;
        let mut out = vec![0.0; self.dim];
        for &id in &ids {
            out.iter_mut().zip(self.row(id)).for_each(|(o, w)| *o += w);
        }
        let n = ids.len() as f64;
        Ok(out.into_iter().map(|o| o / n).collect())
    }

    fn backward(&self, text: &String, grad_output: &[f64], grad_params: &mut [f64]) -> Result<()> {
        let ids = self.token_buckets(text)?;
        let n = ids.len() as f64;
        for id in ids {
            let row = &mut grad_params[id * self.dim..(id + 1) * self.dim];
            row.iter_mut().zip(grad_output).for_each(|(w, g)| *w += g / n);
        }
        Ok(())
    }
}

impl TokenEncoder for BagOfWordsEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn token_states(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        Ok(word_tokens(text)
            .iter()
            .map(|t| self.row(self.bucket(&t.surface)).to_vec())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_steps: usize,
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub symmetric: bool,
    pub negatives: NegativeSet,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            max_steps: 1000,
            eval_every: 100,
            checkpoint_dir: None,
            symmetric: true,
            negatives: NegativeSet::Full,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn loss_options(&self) -> InfoNceOptions {
        InfoNceOptions {
            temperature: self.temperature,
            symmetric: self.symmetric,
            negatives: self.negatives,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Precondition(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_steps == 0 || self.eval_every == 0 {
            return Err(Error::Precondition("max_steps and eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedEncoder<E> {
    pub encoder: E,
    pub best_step: usize,
    pub best_accuracy: f64,
    /// Id of the selected checkpoint file when a checkpoint directory was configured.
    pub checkpoint: Option<String>,
    pub history: Vec<EvalRecord>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<E> {
    step: usize,
    loss: f64,
    heldout_accuracy: f64,
    encoder: E,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestPointer {
    pub checkpoint: String,
    pub step: usize,
    pub heldout_accuracy: f64,
}

pub const BEST_POINTER: &str = "best";

pub fn checkpoint_id(step: usize) -> String {
    format!("ckpt-{step:06}")
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint<E: DeserializeOwned>(dir: &Path, id: &str) -> Result<E> {
    let bytes = fs::read(dir.join(format!("{id}.json")))?;
    let ckpt: Checkpoint<E> = serde_json::from_slice(&bytes)?;
    Ok(ckpt.encoder)
}

pub fn read_best_pointer(dir: &Path) -> Result<BestPointer> {
    Ok(serde_json::from_slice(&fs::read(dir.join(BEST_POINTER))?)?)
}

pub fn load_best<E: DeserializeOwned>(dir: &Path) -> Result<E> {
    load_checkpoint(dir, &read_best_pointer(dir)?.checkpoint)
}

fn unit_with_norm(y: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let n = norm(&y);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::ZeroVector);
    }
    Ok((y.into_iter().map(|v| v / n).collect(), n))
}

/// Pulls a gradient on `z = y / |y|` back onto `y`.
fn normalize_backward(z: &[f64], n: f64, grad_z: &[f64]) -> Vec<f64> {
    let zg = dot(z, grad_z);
    z.iter().zip(grad_z).map(|(zi, gi)| (gi - zi * zg) / n).collect()
}

/// Contrastive loss of one batch under `encoder`.
pub fn batch_loss<E: DifferentiableEncoder>(
    encoder: &E,
    batch: &[(E::Input, E::Input)],
    options: &InfoNceOptions,
) -> Result<f64> {
    let embed = |x: &E::Input| encoder.forward(x).and_then(unit_with_norm).map(|p| p.0);
    let tweets = batch.iter().map(|(t, _)| embed(t)).collect::<Result<Vec<_>>>()?;
    let replies = batch.iter().map(|(_, r)| embed(r)).collect::<Result<Vec<_>>>()?;
    super::infonce::infonce_loss_with(&tweets, &replies, options)
}

/// Batch loss and its gradient with respect to the encoder parameters.
pub fn batch_loss_and_grad<E: DifferentiableEncoder>(
    encoder: &E,
    batch: &[(E::Input, E::Input)],
    options: &InfoNceOptions,
) -> Result<(f64, Vec<f64>)> {
    let mut units = Vec::with_capacity(2 * batch.len());
    for x in batch.iter().map(|(t, _)| t).chain(batch.iter().map(|(_, r)| r)) {
        units.push(unit_with_norm(encoder.forward(x)?)?);
    }
    let (tweets, replies) = units.split_at(batch.len());
    let tweets: Vec<Vec<f64>> = tweets.iter().map(|u| u.0.clone()).collect();
    let replies: Vec<Vec<f64>> = replies.iter().map(|u| u.0.clone()).collect();
    let (loss, g_t, g_r) = infonce_loss_and_grad(&tweets, &replies, options)?;

    let mut grad = vec![0.0; encoder.params().len()];
    let inputs = batch.iter().map(|(t, _)| t).chain(batch.iter().map(|(_, r)| r));
    for ((x, (z, n)), g) in inputs.zip(&units).zip(g_t.iter().chain(&g_r)) {
        encoder.backward(x, &normalize_backward(z, *n, g), &mut grad)?;
    }
    Ok((loss, grad))
}

fn heldout_accuracy<E: DifferentiableEncoder>(encoder: &E, heldout: &[(E::Input, E::Input)]) -> Result<f64> {
    let mut tweets = Vec::with_capacity(heldout.len());
    let mut replies = Vec::with_capacity(heldout.len());
    for (t, r) in heldout {
        tweets.push(encoder.forward(t)?);
        replies.push(encoder.forward(r)?);
    }
    pair_retrieval_accuracy(&tweets, &replies)
}

/// Minimizes the contrastive loss over mini-batches of `pairs`, evaluating
/// held-out retrieval accuracy@1 every `eval_every` steps and at the last
/// step. Returns the evaluated state with the highest held-out accuracy
/// (earliest on ties).
pub fn train_tweet_encoder<E, I>(
    encoder: E,
    pairs: I,
    config: &ContrastiveConfig,
    heldout: &[(E::Input, E::Input)],
) -> Result<TrainedEncoder<E>>
where
    E: DifferentiableEncoder,
    I: IntoIterator<Item = (E::Input, E::Input)>,
{
    config.validate()?;
    if heldout.is_empty() {
        return Err(Error::Precondition("held-out set is empty".into()));
    }
    let pairs: Vec<(E::Input, E::Input)> = pairs.into_iter().collect();
    if pairs.len() < config.batch_size {
        return Err(Error::DataExhausted(config.batch_size));
    }
    if let Some(i) = heldout.iter().position(|h| pairs.contains(h)) {
        return Err(Error::Precondition(format!(
            "held-out pair {i} also occurs in the training data"
        )));
    }
    if let Some(dir) = &config.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let options = config.loss_options();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut current = encoder;
    let mut adam = Adam::new(config.optimizer, current.params().len());
    let mut best: Option<(E, usize, f64, Option<String>)> = None;
    let mut history = Vec::new();

    for step in 1..=config.max_steps {
        if cursor + config.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch: Vec<(E::Input, E::Input)> = order[cursor..cursor + config.batch_size]
            .iter()
            .map(|&i| pairs[i].clone())
            .collect();
        cursor += config.batch_size;

        let (loss, grad) = match batch_loss_and_grad(&current, &batch, &options) {
            Ok(v) => v,
            Err(Error::ZeroVector) => return Err(Error::DivergedLoss(step)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedLoss(step));
        }
        adam.step(current.params_mut(), &grad);

        if step % config.eval_every != 0 && step != config.max_steps {
            continue;
        }
        let accuracy = heldout_accuracy(&current, heldout)?;
        log::info!("step {step}: loss {loss:.4}, held-out accuracy@1 {accuracy:.4}");
        history.push(EvalRecord {
            step,
            loss,
            heldout_accuracy: accuracy,
        });
        let id = match &config.checkpoint_dir {
            Some(dir) => {
                let id = checkpoint_id(step);
                let ckpt = Checkpoint {
                    step,
                    loss,
                    heldout_accuracy: accuracy,
                    encoder: &current,
                };
                write_atomic(dir, &format!("{id}.json"), &serde_json::to_vec(&ckpt)?)?;
                Some(id)
            }
            None => None,
        };
        if best.as_ref().is_none_or(|b| accuracy > b.2) {
            if let (Some(dir), Some(id)) = (&config.checkpoint_dir, &id) {
                let pointer = BestPointer {
                    checkpoint: id.clone(),
                    step,
                    heldout_accuracy: accuracy,
                };
                write_atomic(dir, BEST_POINTER, &serde_json::to_vec_pretty(&pointer)?)?;
            }
            best = Some((current.clone(), step, accuracy, id));
        }
    }

    let (encoder, best_step, best_accuracy, checkpoint) = best.expect("the last step is always evaluated");
    Ok(TrainedEncoder {
        encoder,
        best_step,
        best_accuracy,
        checkpoint,
        history,
    })
}

/// Reads tab-separated `tweet<TAB>reply` records, one per line.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(r), None) => pairs.push((t.to_string(), r.to_string())),
            _ => {
                return Err(Error::format(
                    path,
                    i + 1,
                    "expected two tab-separated fields",
                ))
            }
        }
    }
    Ok(pairs)
}
