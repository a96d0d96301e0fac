use std::sync::Arc;

use tweetkit::native::NativeStore;
use tweetkit::registry::{CompositeStore, ModelCard, ModelStore, ProblemType, TaskSpec};
use tweetkit::{Backend, Error, Result};

use crate::config::ModelConfig;
use crate::hub::{fetch_error, Hub};
use crate::model::{load_weights, Encoder, TransformerClassifier, TransformerEncoder, TransformerMaskFiller, TransformerTagger};
use crate::text::TextEncoder;

const WEIGHT_FILES: &[&str] = &["model.safetensors", "pytorch_model.bin"];

/// Opens RoBERTa-family checkpoints from the hub (`hf://`) or a local directory.
#[derive(Clone, Debug)]
pub struct TransformerStore {
    hub: Hub,
}

impl TransformerStore {
    pub fn new(hub: Hub) -> Self {
        Self { hub }
    }

    pub fn from_env() -> Self {
        Self::new(Hub::from_env())
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    fn load_text(&self, uri: &str, rev: &str, config: &ModelConfig) -> Result<TextEncoder> {
        let (max, pad) = (config.max_tokens(), config.pad_token_id);
        if let Some(p) = self.hub.file(uri, rev, "tokenizer.json")? {
            return TextEncoder::from_tokenizer_json(&p, max, pad);
        }
        match (
            self.hub.file(uri, rev, "vocab.json")?,
            self.hub.file(uri, rev, "merges.txt")?,
        ) {
            (Some(v), Some(m)) => TextEncoder::from_vocab_merges(&v, &m, max, pad),
            _ => Err(fetch_error(uri, "no tokenizer.json and no vocab.json + merges.txt")),
        }
    }
}

impl ModelStore for TransformerStore {
    fn open(&self, card: &ModelCard, spec: &TaskSpec) -> Result<Backend> {
        let (uri, rev) = (card.source_uri.as_str(), card.revision.as_str());
        let config_path = self
            .hub
            .file(uri, rev, "config.json")?
            .ok_or_else(|| fetch_error(uri, "config.json not found"))?;
        let config = ModelConfig::from_file(&config_path)?;
        let (_, weights) = self
            .hub
            .first_file(uri, rev, WEIGHT_FILES)?
            .ok_or_else(|| fetch_error(uri, "no model.safetensors or pytorch_model.bin"))?;
        let text = self.load_text(uri, rev, &config)?;
        let vb = load_weights(&weights)?;
        let encoder = Encoder::load(&config, text, &vb)?;
        let model_labels = config.labels();
        Ok(match spec.problem_type {
            ProblemType::SingleLabel | ProblemType::MultiLabel => {
                let n = model_labels.as_ref().map_or(spec.labels.len(), Vec::len);
                let mut clf = TransformerClassifier::load(encoder, &vb, n)?;
                if let Some(labels) = &model_labels {
                    clf = clf.align_labels(labels, &spec.labels);
                }
                Backend::classifier(clf)
            }
            ProblemType::SequenceLabel => {
                let tags = model_labels
                    .ok_or_else(|| Error::Encoder(format!("{uri}: tagger config lacks id2label")))?;
                Backend::tagger(TransformerTagger::load(encoder, &vb, tags)?)
            }
            ProblemType::MaskFill => Backend::mask_filler(TransformerMaskFiller::load(encoder, &vb, &config)?),
            ProblemType::SentenceEmbed => Backend::encoder(TransformerEncoder::new(encoder)),
        })
    }
}

/// Store for every built-in scheme: `hf` and `file` checkpoints plus `native` models.
pub fn default_store(hub: Hub) -> CompositeStore {
    let transformer: Arc<dyn ModelStore> = Arc::new(TransformerStore::new(hub));
    CompositeStore::new()
        .with("hf", transformer.clone())
        .with("file", transformer)
        .with("native", Arc::new(NativeStore::default()))
}
