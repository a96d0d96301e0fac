use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tweetkit::RawTweet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<(RawTweet, RawTweet)>,
    /// Tweets with no id or no replies.
    pub skipped: usize,
}

/// One `(tweet, reply)` pair per tweet that has replies, the reply drawn
/// uniformly with a generator seeded by `seed`. Pairs follow tweet order.
pub fn sample_tweet_reply_pairs(
    tweets: &[RawTweet],
    replies_by_tweet: &HashMap<String, Vec<RawTweet>>,
    seed: u64,
) -> PairSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for tweet in tweets {
        let replies = tweet.id.as_ref().and_then(|id| replies_by_tweet.get(id));
        match replies.and_then(|r| r.choose(&mut rng)) {
            Some(reply) => pairs.push((tweet.clone(), reply.clone())),
            None => skipped += 1,
        }
    }
    PairSample { pairs, skipped }
}
