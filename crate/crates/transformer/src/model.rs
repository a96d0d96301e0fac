//! RoBERTa encoder with classification, tagging, masked-LM and plain heads.

use std::path::Path;

use candle_core::{DType, Device, IndexOp, Module, Tensor};
use candle_nn::{layer_norm, linear, LayerNorm, Linear, VarBuilder};
use candle_transformers::models::xlm_roberta::XLMRobertaModel;

use tweetkit::backend::{word_tokens, TokenLogits};
use tweetkit::{Error, MaskFiller, Result, SequenceClassifier, TokenEncoder, TokenTagger};

use crate::config::ModelConfig;
use crate::text::{Encoded, TextEncoder};

const BATCH: usize = 16;

pub(crate) fn candle_error(e: candle_core::Error) -> Error {
    Error::Encoder(e.to_string())
}

/// Opens `model.safetensors` or `pytorch_model.bin`.
pub fn load_weights(path: &Path) -> Result<VarBuilder<'static>> {
    let device = Device::Cpu;
    let vb = if path.extension().is_some_and(|e| e == "safetensors") {
        VarBuilder::from_buffered_safetensors(std::fs::read(path)?, DType::F32, &device)
    } else {
        VarBuilder::from_pth(path, DType::F32, &device)
    };
    vb.map_err(candle_error)
}

/// The encoder body plus tokenizer.
pub struct Encoder {
    model: XLMRobertaModel,
    text: TextEncoder,
    hidden: usize,
}

impl Encoder {
    /// Weights may sit under a `roberta.` prefix (task checkpoints) or at the root (bare encoders).
    pub fn load(config: &ModelConfig, text: TextEncoder, vb: &VarBuilder) -> Result<Self> {
        let body = if vb.contains_tensor("roberta.embeddings.word_embeddings.weight") {
            vb.pp("roberta")
        } else {
            vb.clone()
        };
        let model = XLMRobertaModel::new(&config.to_candle(), body).map_err(candle_error)?;
        Ok(Self {
            model,
            text,
            hidden: config.hidden_size,
        })
    }

    pub fn text(&self) -> &TextEncoder {
        &self.text
    }

    pub fn encode(&self, text: &str) -> Result<Encoded> {
        let enc = self.text.encode(text)?;
        if enc.ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(enc)
    }

    /// Final hidden states, `[batch, len, hidden]`, for right-padded id rows.
    pub fn forward(&self, rows: &[&[u32]]) -> Result<Tensor> {
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let pad = self.text.pad_id();
        let mut ids = Vec::with_capacity(rows.len() * len);
        let mut mask = Vec::with_capacity(rows.len() * len);
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(pad, len - r.len()));
            mask.extend(std::iter::repeat_n(1u32, r.len()));
            mask.extend(std::iter::repeat_n(0u32, len - r.len()));
        }
        let shape = (rows.len(), len);
        let dev = &Device::Cpu;
        let ids = Tensor::from_vec(ids, shape, dev).map_err(candle_error)?;
        let mask = Tensor::from_vec(mask, shape, dev).map_err(candle_error)?;
        let types = ids.zeros_like().map_err(candle_error)?;
        self.model
            .forward(&ids, &mask, &types, None, None, None)
            .map_err(candle_error)
    }

    fn forward_one(&self, ids: &[u32]) -> Result<Tensor> {
        self.forward(&[ids])?.i(0).map_err(candle_error)
    }
}

fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    t.to_dtype(DType::F64)
        .and_then(|t| t.to_vec2::<f64>())
        .map_err(candle_error)
}

pub struct TransformerClassifier {
    encoder: Encoder,
    dense: Linear,
    out_proj: Linear,
    /// `order[k]` is the model output feeding task label `k`.
    order: Vec<usize>,
}

impl TransformerClassifier {
    pub fn load(encoder: Encoder, vb: &VarBuilder, num_labels: usize) -> Result<Self> {
        let h = encoder.hidden;
        let head = vb.pp("classifier");
        let dense = linear(h, h, head.pp("dense")).map_err(candle_error)?;
        let out_proj = linear(h, num_labels, head.pp("out_proj")).map_err(candle_error)?;
        Ok(Self {
            encoder,
            dense,
            out_proj,
            order: (0..num_labels).collect(),
        })
    }

    /// Reorders outputs so that `model_labels` line up with `task_labels`.
    /// Leaves the order alone unless both name the same label set.
    pub fn align_labels(mut self, model_labels: &[String], task_labels: &[String]) -> Self {
        if model_labels.len() != self.order.len() || task_labels.len() != self.order.len() {
            return self;
        }
        let key = |s: &String| s.trim().to_lowercase();
        let order: Option<Vec<usize>> = task_labels
            .iter()
            .map(|t| model_labels.iter().position(|m| key(m) == key(t)))
            .collect();
        if let Some(order) = order {
            let mut seen = order.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() == order.len() {
                self.order = order;
            }
        }
        self
    }

    fn head(&self, cls: &Tensor) -> Result<Vec<Vec<f64>>> {
        let x = self.dense.forward(cls).and_then(|x| x.tanh()).map_err(candle_error)?;
        let raw = to_rows(&self.out_proj.forward(&x).map_err(candle_error)?)?;
        Ok(raw
            .into_iter()
            .map(|r| self.order.iter().map(|&i| r[i]).collect())
            .collect())
    }
}

impl SequenceClassifier for TransformerClassifier {
    fn num_labels(&self) -> usize {
        self.order.len()
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.logits_batch(&[text])?.remove(0))
    }

    fn logits_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let encoded = texts
            .iter()
            .map(|t| self.encoder.encode(t))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in encoded.chunks(BATCH) {
            let rows: Vec<&[u32]> = chunk.iter().map(|e| e.ids.as_slice()).collect();
            let hidden = self.encoder.forward(&rows)?;
            let cls = hidden.i((.., 0)).map_err(candle_error)?;
            out.extend(self.head(&cls)?);
        }
        Ok(out)
    }
}

pub struct TransformerTagger {
    encoder: Encoder,
    classifier: Linear,
    tags: Vec<String>,
}

impl TransformerTagger {
    pub fn load(encoder: Encoder, vb: &VarBuilder, tags: Vec<String>) -> Result<Self> {
        let classifier = linear(encoder.hidden, tags.len(), vb.pp("classifier")).map_err(candle_error)?;
        Ok(Self {
            encoder,
            classifier,
            tags,
        })
    }
}

/// Index of the first subword overlapping each word; `None` when truncation dropped it.
pub fn first_subwords(words: &[(usize, usize)], offsets: &[(usize, usize)]) -> Vec<Option<usize>> {
    words
        .iter()
        .map(|&(s, e)| offsets.iter().position(|&(a, b)| b > a && a < e && b > s))
        .collect()
}

impl TokenTagger for TransformerTagger {
    fn tags(&self) -> &[String] {
        &self.tags
    }

    fn tag_logits(&self, text: &str) -> Result<TokenLogits> {
        let mut tokens = word_tokens(text);
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let enc = self.encoder.encode(text)?;
        let spans: Vec<_> = tokens.iter().map(|t| (t.start, t.end)).collect();
        let firsts = first_subwords(&spans, &enc.offsets);
        let kept = firsts.iter().take_while(|f| f.is_some()).count();
        if kept < tokens.len() {
            log::warn!("input truncated: tagging {kept} of {} words", tokens.len());
            tokens.truncate(kept);
        }
        let hidden = self.encoder.forward_one(&enc.ids)?;
        let all = to_rows(&self.classifier.forward(&hidden).map_err(candle_error)?)?;
        let logits = firsts[..kept].iter().map(|f| all[f.expect("kept")].clone()).collect();
        Ok(TokenLogits { tokens, logits })
    }
}

pub struct TransformerMaskFiller {
    encoder: Encoder,
    dense: Linear,
    layer_norm: LayerNorm,
    decoder: Tensor,
    bias: Tensor,
    mask: (String, u32),
    vocab: Vec<String>,
}

impl TransformerMaskFiller {
    pub fn load(encoder: Encoder, vb: &VarBuilder, config: &ModelConfig) -> Result<Self> {
        let h = config.hidden_size;
        let head = vb.pp("lm_head");
        let dense = linear(h, h, head.pp("dense")).map_err(candle_error)?;
        let layer_norm = layer_norm(h, config.layer_norm_eps, head.pp("layer_norm")).map_err(candle_error)?;
        let decoder = if head.contains_tensor("decoder.weight") {
            head.get((config.vocab_size, h), "decoder.weight")
        } else if vb.contains_tensor("roberta.embeddings.word_embeddings.weight") {
            vb.get((config.vocab_size, h), "roberta.embeddings.word_embeddings.weight")
        } else {
            vb.get((config.vocab_size, h), "embeddings.word_embeddings.weight")
        }
        .map_err(candle_error)?;
        let bias = if head.contains_tensor("bias") {
            head.get(config.vocab_size, "bias")
        } else {
            head.get(config.vocab_size, "decoder.bias")
        }
        .map_err(candle_error)?;
        let mask = encoder
            .text()
            .mask_token()
            .ok_or_else(|| Error::Encoder("tokenizer has no mask token".into()))?;
        let vocab = (0..config.vocab_size as u32).map(|id| encoder.text().display(id)).collect();
        Ok(Self {
            encoder,
            dense,
            layer_norm,
            decoder,
            bias,
            mask,
            vocab,
        })
    }
}

impl MaskFiller for TransformerMaskFiller {
    fn mask_token(&self) -> &str {
        &self.mask.0
    }

    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn is_special(&self, id: usize) -> bool {
        u32::try_from(id).is_ok_and(|id| self.encoder.text().is_special(id))
    }

    fn mask_logits(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let enc = self.encoder.encode(text)?;
        let positions: Vec<u32> = enc
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == self.mask.1)
            .map(|(i, _)| i as u32)
            .collect();
        if positions.is_empty() {
            return Err(Error::NoMaskPresent(self.mask.0.clone()));
        }
        let hidden = self.encoder.forward_one(&enc.ids)?;
        let n = positions.len();
        let idx = Tensor::from_vec(positions, n, &Device::Cpu).map_err(candle_error)?;
        let logits = hidden
            .index_select(&idx, 0)
            .and_then(|x| self.dense.forward(&x))
            .and_then(|x| x.gelu_erf())
            .and_then(|x| self.layer_norm.forward(&x))
            .and_then(|x| x.matmul(&self.decoder.t()?))
            .and_then(|x| x.broadcast_add(&self.bias))
            .map_err(candle_error)?;
        to_rows(&logits)
    }
}

pub struct TransformerEncoder {
    encoder: Encoder,
}

impl TransformerEncoder {
    pub fn new(encoder: Encoder) -> Self {
        Self { encoder }
    }
}

impl TokenEncoder for TransformerEncoder {
    fn dim(&self) -> usize {
        self.encoder.hidden
    }

    fn token_states(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let enc = self.encoder.encode(text)?;
        to_rows(&self.encoder.forward_one(&enc.ids)?)
    }
}
