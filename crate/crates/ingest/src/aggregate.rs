use chrono::{DateTime, TimeDelta, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use tweetkit::classification::Prediction;
use tweetkit::{Error, RawTweet, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub start: DateTime<Utc>,
    /// Every label seen in the predictions, zero included.
    pub counts: IndexMap<String, usize>,
    /// Tweets in the bucket.
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBucketedAggregate {
    pub bucket_width_seconds: i64,
    pub buckets: Vec<Bucket>,
}

impl TimeBucketedAggregate {
    pub fn tweets(&self) -> usize {
        self.buckets.iter().map(|b| b.total).sum()
    }
}

pub fn default_bucket_width() -> TimeDelta {
    TimeDelta::days(1)
}

/// Counts predicted labels per `floor(created_at / width)` bucket, keeping
/// empty buckets between the first and last. Multi-label predictions count
/// once per predicted label.
pub fn aggregate_over_time(
    tweets: &[RawTweet],
    predictions: &[Prediction],
    bucket_width: TimeDelta,
) -> Result<TimeBucketedAggregate> {
    if tweets.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: tweets.len(),
            right: predictions.len(),
        });
    }
    let width = bucket_width.num_seconds();
    if width <= 0 || bucket_width.subsec_nanos() != 0 {
        return Err(Error::Precondition(format!(
            "bucket width must be a positive whole number of seconds, got {bucket_width}"
        )));
    }
    let mut keys = Vec::with_capacity(tweets.len());
    for (i, t) in tweets.iter().enumerate() {
        let at = t.created_at.ok_or(Error::MissingTimestamp(i))?;
        keys.push(at.timestamp().div_euclid(width));
    }
    let (Some(&first), Some(&last)) = (keys.iter().min(), keys.iter().max()) else {
        return Ok(TimeBucketedAggregate {
            bucket_width_seconds: width,
            buckets: Vec::new(),
        });
    };
    let mut labels: IndexMap<String, usize> = IndexMap::new();
    for p in predictions {
        for l in p.distribution.keys().map(String::as_str).chain(p.labels()) {
            labels.entry(l.to_string()).or_insert(0);
        }
    }
    let mut buckets: Vec<Bucket> = (first..=last)
        .map(|k| -> Result<Bucket> {
            let start = DateTime::from_timestamp(k * width, 0)
                .ok_or_else(|| Error::Precondition("bucket start out of range".into()))?;
            Ok(Bucket {
                start,
                counts: labels.clone(),
                total: 0,
            })
        })
        .collect::<Result<_>>()?;
    for (key, p) in keys.iter().zip(predictions) {
        let b = &mut buckets[(key - first) as usize];
        b.total += 1;
        for l in p.labels() {
            *b.counts.get_mut(l).expect("label registered") += 1;
        }
    }
    Ok(TimeBucketedAggregate {
        bucket_width_seconds: width,
        buckets,
    })
}
