use std::collections::BTreeMap;
use std::path::Path;

use candle_nn::Activation;
use candle_transformers::models::xlm_roberta;
use serde::Deserialize;

use tweetkit::{Error, Result};

/// The subset of a checkpoint's `config.json` the encoder needs.
#[derive(Clone, Debug, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    #[serde(default = "default_max_positions")]
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_pad")]
    pub pad_token_id: u32,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub hidden_act: Activation,
    #[serde(default = "default_position_type")]
    pub position_embedding_type: String,
    #[serde(default)]
    pub model_type: Option<String>,
    #[serde(default)]
    pub id2label: Option<BTreeMap<String, String>>,
}

fn default_max_positions() -> usize {
    514
}

fn default_type_vocab() -> usize {
    1
}

fn default_pad() -> u32 {
    1
}

fn default_eps() -> f64 {
    1e-5
}

fn default_position_type() -> String {
    "absolute".into()
}

impl ModelConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        if let Some(t) = &cfg.model_type {
            if !matches!(t.as_str(), "roberta" | "xlm-roberta" | "bertweet" | "camembert") {
                log::warn!("model_type `{t}` is not RoBERTa-family; loading it as RoBERTa");
            }
        }
        if cfg.num_attention_heads == 0 || cfg.hidden_size % cfg.num_attention_heads != 0 {
            return Err(Error::Encoder(format!(
                "hidden size {} is not divisible by {} heads",
                cfg.hidden_size, cfg.num_attention_heads
            )));
        }
        Ok(cfg)
    }

    /// Labels in output order, when the config names them.
    pub fn labels(&self) -> Option<Vec<String>> {
        let map = self.id2label.as_ref()?;
        let mut pairs = map
            .iter()
            .map(|(k, v)| k.parse::<usize>().map(|i| (i, v.clone())))
            .collect::<std::result::Result<Vec<_>, _>>()
            .ok()?;
        pairs.sort();
        pairs.iter().enumerate().all(|(i, (k, _))| i == *k).then(|| pairs.into_iter().map(|p| p.1).collect())
    }

    /// Longest token sequence, special tokens included, the position table allows.
    pub fn max_tokens(&self) -> usize {
        self.max_position_embeddings
            .saturating_sub(self.pad_token_id as usize + 1)
            .clamp(2, 512)
    }

    pub fn to_candle(&self) -> xlm_roberta::Config {
        xlm_roberta::Config {
            hidden_size: self.hidden_size,
            layer_norm_eps: self.layer_norm_eps,
            attention_probs_dropout_prob: 0.0,
            hidden_dropout_prob: 0.0,
            num_attention_heads: self.num_attention_heads,
            position_embedding_type: self.position_embedding_type.clone(),
            intermediate_size: self.intermediate_size,
            hidden_act: self.hidden_act,
            num_hidden_layers: self.num_hidden_layers,
            vocab_size: self.vocab_size,
            max_position_embeddings: self.max_position_embeddings,
            type_vocab_size: self.type_vocab_size,
            pad_token_id: self.pad_token_id,
        }
    }
}
