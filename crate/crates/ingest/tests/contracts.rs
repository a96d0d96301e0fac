use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use indexmap::IndexMap;
use proptest::prelude::*;
use serde_json::json;
use tweetkit::classification::{Decision, Prediction};
use tweetkit::RawTweet;
use tweetkit_ingest::client::{BackoffReason, HttpResponse, NoSleep};
use tweetkit_ingest::mock::MockUpstream;
use tweetkit_ingest::{
    aggregate_over_time, sample_tweet_reply_pairs, ClientConfig, Credentials, IngestError, SearchClient,
    SearchQuery,
};

fn day(d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 5, d, h, 0, 0).unwrap()
}

fn tweet(i: usize, text: &str, at: DateTime<Utc>, lang: &str) -> RawTweet {
    RawTweet {
        text: text.into(),
        id: Some(i.to_string()),
        created_at: Some(at),
        lang: Some(lang.into()),
    }
}

/// `n` tweets mentioning #NLProc, one minute apart from May 2nd.
fn corpus(n: usize) -> Vec<RawTweet> {
    (0..n)
        .map(|i| tweet(i, &format!("tweet {i} about #NLProc"), day(2, 0) + TimeDelta::minutes(i as i64), "en"))
        .collect()
}

fn query(max: usize) -> SearchQuery {
    SearchQuery::new("#NLProc", day(1, 0), day(15, 0), None, max).unwrap()
}

fn client(upstream: Arc<MockUpstream>) -> (SearchClient, Arc<NoSleep>) {
    let sleeper = Arc::new(NoSleep::default());
    let c = SearchClient::new(upstream, Credentials::new("t"), ClientConfig::default()).with_sleeper(sleeper.clone());
    (c, sleeper)
}

#[test]
fn two_pages_of_100() {
    let upstream = Arc::new(MockUpstream::new(corpus(200)));
    let (c, _) = client(upstream.clone());
    let out = c.fetch_tweets(&query(1000)).unwrap();
    assert_eq!(out.tweets, corpus(200));
    assert_eq!(out.pages, 2);
    assert!(!out.capped);
    let reqs = upstream.requests();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[0].param("start_time"), Some("2022-05-01T00:00:00Z"));
    assert_eq!(reqs[1].param("next_token"), Some("100"));
    assert_eq!(reqs[0].bearer_token, "t");
}

#[test]
fn empty_window() {
    let (c, _) = client(Arc::new(MockUpstream::new(corpus(50))));
    let q = SearchQuery::new("#NLProc", day(20, 0), day(21, 0), None, 10).unwrap();
    let out = c.fetch_tweets(&q).unwrap();
    assert!(out.tweets.is_empty() && !out.capped);
}

#[test]
fn rate_limit_then_success_matches_clean_run() {
    let (clean, _) = client(Arc::new(MockUpstream::new(corpus(250))));
    let clean = clean.fetch_tweets(&query(1000)).unwrap();

    let upstream = MockUpstream::new(corpus(250)).then_status(429, Some(Duration::from_secs(7)));
    let (c, sleeper) = client(Arc::new(upstream));
    let out = c.fetch_tweets(&query(1000)).unwrap();
    assert_eq!(out.tweets, clean.tweets);
    assert_eq!(out.backoffs.len(), 1);
    assert_eq!(out.backoffs[0].reason, BackoffReason::RateLimited);
    assert_eq!(*sleeper.waits.lock().unwrap(), [Duration::from_secs(7)]);
}

#[test]
fn server_errors_back_off_exponentially_up_to_five_attempts() {
    let mut upstream = MockUpstream::new(corpus(5));
    for _ in 0..4 {
        upstream = upstream.then_status(503, None);
    }
    let (c, sleeper) = client(Arc::new(upstream));
    assert_eq!(c.fetch_tweets(&query(10)).unwrap().tweets.len(), 5);
    let secs: Vec<u64> = sleeper.waits.lock().unwrap().iter().map(Duration::as_secs).collect();
    assert_eq!(secs, [1, 2, 4, 8]);

    let mut upstream = MockUpstream::new(corpus(5)).then(Err("connection reset".into()));
    for _ in 0..4 {
        upstream = upstream.then_status(500, None);
    }
    let upstream = Arc::new(upstream);
    let (c, _) = client(upstream.clone());
    match c.fetch_tweets(&query(10)) {
        Err(e @ IngestError::Upstream { .. }) => assert!(e.is_retryable()),
        other => panic!("{other:?}"),
    }
    assert_eq!(upstream.requests().len(), 5);
}

#[test]
fn auth_failure_is_not_retried() {
    let upstream = Arc::new(MockUpstream::new(corpus(5)).then_status(401, None));
    let (c, _) = client(upstream.clone());
    let err = c.fetch_tweets(&query(10)).unwrap_err();
    assert!(matches!(err, IngestError::Auth(_)) && !err.is_retryable());
    assert_eq!(upstream.requests().len(), 1);
}

#[test]
fn long_rate_limit_is_passed_to_the_caller() {
    let upstream = MockUpstream::new(corpus(5)).then_status(429, Some(Duration::from_secs(900)));
    let (c, _) = client(Arc::new(upstream));
    match c.fetch_tweets(&query(10)) {
        Err(IngestError::RateLimited { retry_after }) => assert_eq!(retry_after.as_secs(), 900),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_payload_keeps_raw_body() {
    let body = json!({"data": [{"id": "1", "text": "no timestamp"}]}).to_string();
    let upstream = MockUpstream::new(vec![]).then(Ok(HttpResponse::ok(body.clone())));
    let (c, _) = client(Arc::new(upstream));
    match c.fetch_tweets(&query(10)) {
        Err(IngestError::Upstream { raw, .. }) => assert_eq!(raw, Some(body)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn client_enforces_window_language_and_uniqueness() {
    let page = json!({
        "data": [
            {"id": "1", "text": "#NLProc in", "created_at": "2022-05-02T00:00:00Z", "lang": "es"},
            {"id": "2", "text": "#NLProc early", "created_at": "2022-04-30T00:00:00Z", "lang": "es"},
            {"id": "3", "text": "#NLProc at end", "created_at": "2022-05-15T00:00:00Z", "lang": "es"},
            {"id": "4", "text": "#NLProc english", "created_at": "2022-05-02T00:00:00Z", "lang": "en"},
            {"id": "1", "text": "#NLProc in", "created_at": "2022-05-02T00:00:00Z", "lang": "es"},
            {"id": "5", "text": "#NLProc ok", "created_at": "2022-05-14T23:59:59Z", "lang": "es", "extra": 1}
        ],
        "meta": {"result_count": 6}
    })
    .to_string();
    let upstream = Arc::new(MockUpstream::new(vec![]).then(Ok(HttpResponse::ok(page))));
    let (c, _) = client(upstream.clone());
    let q = SearchQuery::new("#NLProc", day(1, 0), day(15, 0), Some("es".into()), 10).unwrap();
    let ids: Vec<_> = c.fetch_tweets(&q).unwrap().tweets.into_iter().map(|t| t.id.unwrap()).collect();
    assert_eq!(ids, ["1", "5"]);
    assert_eq!(upstream.requests()[0].param("query"), Some("#NLProc lang:es"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn pagination_never_exceeds_cap_or_duplicates(n in 0..320usize, max in 1..400usize, overlap in 0..20usize) {
        let mut upstream = MockUpstream::new(corpus(n));
        upstream.overlap = overlap;
        let (c, _) = client(Arc::new(upstream));
        let out = c.fetch_tweets(&query(max)).unwrap();
        prop_assert!(out.tweets.len() <= max);
        prop_assert_eq!(out.tweets.len(), n.min(max));
        let ids: HashSet<_> = out.tweets.iter().map(|t| t.id.clone()).collect();
        prop_assert_eq!(ids.len(), out.tweets.len());
        prop_assert_eq!(&out.tweets[..], &corpus(n)[..n.min(max)]);
        prop_assert_eq!(out.capped, n > max);
    }
}

#[test]
fn single_replies_pair_up_directly() {
    let tweets = corpus(5);
    let replies: HashMap<String, Vec<RawTweet>> = tweets
        .iter()
        .map(|t| (t.id.clone().unwrap(), vec![RawTweet::new(format!("re {}", t.text)).unwrap()]))
        .collect();
    let s = sample_tweet_reply_pairs(&tweets, &replies, 3);
    assert_eq!(s.skipped, 0);
    for (t, r) in &s.pairs {
        assert_eq!(r.text, format!("re {}", t.text));
    }
}

#[test]
fn sampling_is_deterministic_and_skips_replyless_tweets() {
    let tweets = corpus(4);
    let mut replies = HashMap::new();
    replies.insert("0".to_string(), (0..3).map(|k| RawTweet::new(format!("r{k}")).unwrap()).collect::<Vec<_>>());
    replies.insert("2".to_string(), vec![]);
    let a = sample_tweet_reply_pairs(&tweets, &replies, 42);
    for _ in 0..5 {
        assert_eq!(sample_tweet_reply_pairs(&tweets, &replies, 42), a);
    }
    assert_eq!(a.pairs.len(), 1);
    assert_eq!(a.skipped, 3);
}

#[test]
fn reply_choice_is_uniform() {
    let tweets = corpus(1000);
    let replies: HashMap<String, Vec<RawTweet>> = tweets
        .iter()
        .map(|t| {
            let id = t.id.clone().unwrap();
            (id, vec![RawTweet::new("first").unwrap(), RawTweet::new("second").unwrap()])
        })
        .collect();
    let sigma = (1000.0f64 * 0.25).sqrt();
    let mut pooled = 0.0;
    for seed in 0..100 {
        let s = sample_tweet_reply_pairs(&tweets, &replies, seed);
        let first = s.pairs.iter().filter(|(_, r)| r.text == "first").count() as f64;
        assert!((first - 500.0).abs() <= 4.5 * sigma, "seed {seed}: {first}");
        pooled += first;
    }
    assert!((pooled - 50_000.0).abs() <= 3.0 * sigma * 10.0, "{pooled}");
}

fn single(label: &str, labels: &[&str]) -> Prediction {
    Prediction {
        decision: Decision::Single(label.into()),
        distribution: labels
            .iter()
            .map(|l| (l.to_string(), if *l == label { 1.0 } else { 0.0 }))
            .collect(),
    }
}

const SENT: [&str; 3] = ["negative", "neutral", "positive"];

#[test]
fn daily_counts() {
    let tweets = vec![
        tweet(0, "a", day(2, 1), "en"),
        tweet(1, "b", day(2, 20), "en"),
        tweet(2, "c", day(3, 5), "en"),
        tweet(3, "d", day(3, 9), "en"),
    ];
    let preds: Vec<_> = ["positive", "positive", "negative", "neutral"].iter().map(|l| single(l, &SENT)).collect();
    let agg = aggregate_over_time(&tweets, &preds, TimeDelta::days(1)).unwrap();
    assert_eq!(agg.buckets.len(), 2);
    assert_eq!(agg.buckets[0].start, day(2, 0));
    assert_eq!(agg.buckets[0].counts["positive"], 2);
    assert_eq!(agg.buckets[0].total, 2);
    assert_eq!((agg.buckets[1].counts["negative"], agg.buckets[1].counts["neutral"]), (1, 1));
}

#[test]
fn single_bucket_and_gap_retention() {
    let tweets: Vec<_> = (0..5).map(|i| tweet(i, "x", day(4, i as u32), "en")).collect();
    let preds: Vec<_> = (0..5).map(|_| single("neutral", &SENT)).collect();
    let agg = aggregate_over_time(&tweets, &preds, TimeDelta::days(1)).unwrap();
    assert_eq!(agg.buckets.len(), 1);
    assert_eq!(agg.buckets[0].total, 5);

    let tweets = vec![tweet(0, "x", day(2, 3), "en"), tweet(1, "y", day(4, 3), "en")];
    let preds = vec![single("positive", &SENT), single("negative", &SENT)];
    let agg = aggregate_over_time(&tweets, &preds, TimeDelta::days(1)).unwrap();
    assert_eq!(agg.buckets.len(), 3);
    assert_eq!(agg.buckets[1].total, 0);
    assert!(agg.buckets[1].counts.values().all(|&c| c == 0));
}

#[test]
fn missing_timestamp_names_the_tweet() {
    let mut tweets = corpus(3);
    tweets[1].created_at = None;
    let preds: Vec<_> = (0..3).map(|_| single("neutral", &SENT)).collect();
    assert!(matches!(
        aggregate_over_time(&tweets, &preds, TimeDelta::days(1)),
        Err(tweetkit::Error::MissingTimestamp(1))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregation_conserves_label_counts(
        items in prop::collection::vec((0..30 * 24 * 3600i64, 0..3usize), 0..200),
        width_hours in 1..72i64,
    ) {
        let base = day(1, 0).timestamp();
        let tweets: Vec<_> = items
            .iter()
            .enumerate()
            .map(|(i, (s, _))| tweet(i, "x", DateTime::from_timestamp(base + s, 0).unwrap(), "en"))
            .collect();
        let preds: Vec<_> = items.iter().map(|(_, l)| single(SENT[*l], &SENT)).collect();
        let agg = aggregate_over_time(&tweets, &preds, TimeDelta::hours(width_hours)).unwrap();
        let mut expected: IndexMap<&str, usize> = IndexMap::new();
        for (_, l) in &items {
            *expected.entry(SENT[*l]).or_default() += 1;
        }
        for label in SENT {
            let got: usize = agg.buckets.iter().map(|b| b.counts.get(label).copied().unwrap_or(0)).sum();
            prop_assert_eq!(got, expected.get(label).copied().unwrap_or(0));
        }
        prop_assert_eq!(agg.tweets(), items.len());
        for b in &agg.buckets {
            prop_assert_eq!(b.counts.values().sum::<usize>(), b.total);
        }
        for w in agg.buckets.windows(2) {
            prop_assert_eq!(w[1].start - w[0].start, TimeDelta::hours(width_hours));
        }
    }
}
