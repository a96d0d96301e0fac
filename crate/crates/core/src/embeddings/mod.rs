//! Word vectors, tweet embeddings and contrastive encoder training.

pub mod infonce;
pub mod training;
pub mod tweet;
pub mod vector;
pub mod word_table;

pub use infonce::{infonce_loss, infonce_loss_and_grad, infonce_loss_with, InfoNceOptions, NegativeSet};
pub use training::{
    read_pairs, train_tweet_encoder, BagOfWordsEncoder, ContrastiveConfig, DifferentiableEncoder, LinearEncoder,
    TrainedEncoder,
};
pub use tweet::{
    embed_tweet, pair_retrieval_accuracy, retrieval_accuracy, retrieval_accuracy_at_1, similarity_score,
    tweet_similarity, TweetEncoder,
};
pub use vector::{cosine, EmbeddingVector};
pub use word_table::{SubwordBuckets, WordTable};
