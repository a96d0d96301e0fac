//! Offline stand-ins for the model hub and the tweet search API.
//!
//! Used by `tweetkit serve --demo` and the contract tests; outputs are fixed
//! so responses can be compared byte for byte.

use std::sync::Arc;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};

use tweetkit::registry::{auxiliary_tasks, builtin_tasks, multilingual_languages, LanguageScope};
use tweetkit::stub::{ConstantClassifier, FixedMaskFiller, ScriptedTagger, StubStore, TableEncoder};
use tweetkit::{Backend, ModelCard, RawTweet, Registry, Result, SequenceClassifier};
use tweetkit_ingest::client::NoSleep;
use tweetkit_ingest::mock::MockUpstream;
use tweetkit_ingest::{ClientConfig, Credentials, SearchClient};

pub const DEMO_REVISION: &str = "demo-1";

/// Negative / neutral / positive scores from a few cue words.
#[derive(Clone, Debug)]
pub struct KeywordSentiment;

const POSITIVE: &[&str] = &["love", "great", "happy", "amazing", "good", "excelente", "bueno"];
const NEGATIVE: &[&str] = &["hate", "awful", "sad", "terrible", "bad", "malo"];

impl SequenceClassifier for KeywordSentiment {
    fn num_labels(&self) -> usize {
        3
    }

    fn logits(&self, text: &str) -> Result<Vec<f64>> {
        let lower = text.to_lowercase();
        let hits = |words: &[&str]| {
            lower
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| words.contains(w))
                .count() as f64
        };
        let (pos, neg) = (hits(POSITIVE), hits(NEGATIVE));
        Ok(vec![2.0 * neg, 1.0, 2.0 * pos])
    }
}

/// Every built-in task plus the auxiliaries, served from in-memory stubs.
pub fn demo_registry() -> Registry {
    let mut store = StubStore::new();
    let mut cards = Vec::new();
    let tasks = builtin_tasks();
    let spec = |name: &str| tasks.iter().find(|t| t.name == name).expect("builtin task");

    store.insert("stub:sentiment", Backend::classifier(KeywordSentiment));
    cards.push(ModelCard::new(spec("sentiment"), "stub:sentiment", DEMO_REVISION));
    store.insert("stub:sentiment-multilingual", Backend::classifier(KeywordSentiment));
    let codes = multilingual_languages().iter().map(|(c, _)| c.clone()).collect();
    cards.push(
        ModelCard::new(spec("sentiment"), "stub:sentiment-multilingual", DEMO_REVISION)
            .with_scope(LanguageScope::Multilingual(codes)),
    );

    for name in ["emoji", "emotion", "hate", "irony", "offensive", "topic"] {
        let s = spec(name);
        let uri = format!("stub:{name}");
        let mut logits = vec![-1.0; s.labels.len()];
        logits[0] = 1.0;
        store.insert(&uri, Backend::classifier(ConstantClassifier::with_logits(logits)));
        cards.push(ModelCard::new(s, uri, DEMO_REVISION));
    }

    store.insert(
        "stub:stance-abortion",
        Backend::classifier(ConstantClassifier::with_logits(vec![0.0, 0.5, 1.5])),
    );
    cards.push(ModelCard::new(spec("stance"), "stub:stance-abortion", DEMO_REVISION).with_target("abortion"));

    let ner_tags = tweetkit::registry::builtin_ner_tags();
    let tagger = ScriptedTagger::new(ner_tags)
        .tag("Paris", "B-location")
        .tag("Barack", "B-person")
        .tag("Obama", "I-person");
    store.insert("stub:ner", Backend::tagger(tagger));
    cards.push(ModelCard::new(spec("ner"), "stub:ner", DEMO_REVISION));

    let aux = auxiliary_tasks();
    let vocab: Vec<String> = ["<s>", "</s>", "<mask>", "the", "day", "game", "weekend", "night", "week"]
        .into_iter()
        .map(String::from)
        .collect();
    let logits = vec![0.0, 0.0, 0.0, 1.0, 3.0, 2.5, 2.0, 1.5, 0.5];
    store.insert("stub:language-model", Backend::mask_filler(FixedMaskFiller::with_logits(vocab, logits)));
    cards.push(ModelCard::new(&aux[0], "stub:language-model", DEMO_REVISION));

    let encoder = TableEncoder::new(3)
        .with("cat", vec![1.0, 0.2, 0.0])
        .with("kitten", vec![0.9, 0.3, 0.0])
        .with("dog", vec![0.6, 0.8, 0.0])
        .with("stock", vec![0.0, 0.1, 1.0])
        .with("market", vec![0.0, 0.2, 0.9]);
    store.insert("stub:embeddings", Backend::encoder(encoder));
    cards.push(ModelCard::new(&aux[1], "stub:embeddings", DEMO_REVISION));

    let mut registry = Registry::new(Arc::new(store));
    for card in cards {
        registry.register_card(card).expect("demo card");
    }
    registry
}

const DEMO_TEXTS: &[&str] = &[
    "I love the new #NLProc papers this week",
    "Great workshop on tweet models #NLProc",
    "Reviewing season again #NLProc",
    "This benchmark result is awful #NLProc",
    "Happy to share our dataset #NLProc @user",
    "Terrible reviewer comments today #NLProc",
    "Reading group at 3pm #NLProc https://t.co/abc",
];

/// Tweets between 2022-05-01 and 2022-05-15, every 7 hours, English and Spanish.
pub fn demo_corpus() -> Vec<RawTweet> {
    let start = demo_window_start();
    let mut out = Vec::new();
    let mut i = 0usize;
    let mut at = start;
    while at < start + TimeDelta::days(14) {
        let lang = if i % 5 == 4 { "es" } else { "en" };
        let text = if lang == "es" {
            "Un taller excelente sobre #NLProc".to_string()
        } else {
            DEMO_TEXTS[i % DEMO_TEXTS.len()].to_string()
        };
        out.push(
            RawTweet::new(text)
                .expect("non-empty demo tweet")
                .with_id(format!("{}", 1_520_000_000_000_000_000u64 + i as u64))
                .with_created_at(at)
                .with_lang(lang),
        );
        i += 1;
        at += TimeDelta::hours(7);
    }
    out
}

pub fn demo_window_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 5, 1, 0, 0, 0).single().expect("valid date")
}

pub fn demo_upstream() -> MockUpstream {
    MockUpstream::new(demo_corpus())
}

/// A search client over `upstream` that never sleeps between retries.
pub fn demo_search_client(upstream: MockUpstream) -> SearchClient {
    SearchClient::new(Arc::new(upstream), Credentials::new("demo-token"), ClientConfig::default())
        .with_sleeper(Arc::new(NoSleep::default()))
}
