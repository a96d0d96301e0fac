//! Tweet retrieval for hashtag analysis and reply-pair collection.

pub mod aggregate;
pub mod client;
pub mod error;
pub mod mock;
pub mod pairs;
pub mod query;

pub use aggregate::{aggregate_over_time, default_bucket_width, Bucket, TimeBucketedAggregate};
pub use client::{ClientConfig, Credentials, FetchOutcome, SearchClient, Transport};
pub use error::IngestError;
pub use pairs::{sample_tweet_reply_pairs, PairSample};
pub use query::SearchQuery;
