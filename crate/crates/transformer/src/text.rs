//! Subword tokenization with character offsets.

use std::collections::HashSet;
use std::path::Path;

use tokenizers::models::bpe::BPE;
use tokenizers::pre_tokenizers::byte_level::ByteLevel;
use tokenizers::processors::roberta::RobertaProcessing;
use tokenizers::{AddedToken, Tokenizer, TruncationParams};

use tweetkit::{Error, Result};

const MASK_CANDIDATES: &[&str] = &["<mask>", "[MASK]"];

/// One encoded text. Offsets are character positions; special tokens have an empty span.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

#[derive(Clone)]
pub struct TextEncoder {
    tokenizer: Tokenizer,
    pad_id: u32,
    special: HashSet<u32>,
}

impl TextEncoder {
    pub fn new(mut tokenizer: Tokenizer, max_tokens: usize, pad_id: u32) -> Result<Self> {
        tokenizer
            .with_truncation(Some(TruncationParams {
                max_length: max_tokens,
                ..TruncationParams::default()
            }))
            .map_err(tok_error)?;
        tokenizer.with_padding(None);
        let special = tokenizer
            .get_added_tokens_decoder()
            .into_iter()
            .filter(|(_, t)| t.special)
            .map(|(id, _)| id)
            .collect();
        Ok(Self {
            tokenizer,
            pad_id,
            special,
        })
    }

    pub fn from_tokenizer_json(path: &Path, max_tokens: usize, pad_id: u32) -> Result<Self> {
        Self::new(Tokenizer::from_file(path).map_err(tok_error)?, max_tokens, pad_id)
    }

    /// Byte-level BPE from `vocab.json` and `merges.txt` with RoBERTa special tokens.
    pub fn from_vocab_merges(vocab: &Path, merges: &Path, max_tokens: usize, pad_id: u32) -> Result<Self> {
        let bpe = BPE::from_file(&path_str(vocab)?, &path_str(merges)?)
            .build()
            .map_err(tok_error)?;
        let mut tokenizer = Tokenizer::new(bpe);
        tokenizer
            .with_pre_tokenizer(Some(ByteLevel::new(false, true, true)))
            .with_decoder(Some(ByteLevel::default()));
        let id = |t: &str| {
            tokenizer
                .token_to_id(t)
                .ok_or_else(|| Error::Encoder(format!("vocabulary lacks `{t}`")))
        };
        let (cls, sep) = (id("<s>")?, id("</s>")?);
        tokenizer.with_post_processor(Some(RobertaProcessing::new(("</s>".into(), sep), ("<s>".into(), cls))));
        let mut specials = vec![
            AddedToken::from("<s>", true),
            AddedToken::from("<pad>", true),
            AddedToken::from("</s>", true),
            AddedToken::from("<unk>", true),
        ];
        if tokenizer.token_to_id("<mask>").is_some() {
            specials.push(AddedToken::from("<mask>", true).lstrip(true));
        }
        tokenizer.add_special_tokens(&specials);
        Self::new(tokenizer, max_tokens, pad_id)
    }

    pub fn encode(&self, text: &str) -> Result<Encoded> {
        let enc = self.tokenizer.encode_char_offsets(text, true).map_err(tok_error)?;
        Ok(Encoded {
            ids: enc.get_ids().to_vec(),
            offsets: enc.get_offsets().to_vec(),
        })
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.get_vocab_size(true)
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special.contains(&id)
    }

    /// The mask token and its id, if the vocabulary has one.
    pub fn mask_token(&self) -> Option<(String, u32)> {
        MASK_CANDIDATES
            .iter()
            .find_map(|t| self.tokenizer.token_to_id(t).map(|id| (t.to_string(), id)))
    }

    /// Display form of a single id: decoded text without surrounding whitespace.
    pub fn display(&self, id: u32) -> String {
        match self.tokenizer.decode(&[id], false) {
            Ok(s) if !s.trim().is_empty() => s.trim().to_string(),
            _ => self.tokenizer.id_to_token(id).unwrap_or_default(),
        }
    }
}

fn path_str(p: &Path) -> Result<String> {
    p.to_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Encoder(format!("non-UTF-8 path {}", p.display())))
}

pub(crate) fn tok_error(e: impl std::fmt::Display) -> Error {
    Error::Encoder(format!("tokenizer: {e}"))
}
