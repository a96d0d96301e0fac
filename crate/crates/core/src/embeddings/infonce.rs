//! In-batch contrastive loss over tweet-reply pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::vector::{dot, norm};

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Which in-batch items act as negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSet {
    /// Every other tweet and every other reply in the batch.
    #[default]
    Full,
    /// As `Full`, except reply anchors see only other tweets.
    NoReplyReply,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoNceOptions {
    pub temperature: f64,
    /// Average over reply anchors as well as tweet anchors.
    pub symmetric: bool,
    pub negatives: NegativeSet,
}

impl Default for InfoNceOptions {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            symmetric: true,
            negatives: NegativeSet::Full,
        }
    }
}

impl InfoNceOptions {
    pub fn with_temperature(temperature: f64) -> Self {
        Self {
            temperature,
            ..Self::default()
        }
    }
}

pub fn infonce_loss(tweets: &[Vec<f64>], replies: &[Vec<f64>], temperature: f64) -> Result<f64> {
    infonce_loss_with(tweets, replies, &InfoNceOptions::with_temperature(temperature))
}

pub fn infonce_loss_with(tweets: &[Vec<f64>], replies: &[Vec<f64>], options: &InfoNceOptions) -> Result<f64> {
    compute(tweets, replies, options, false).map(|(loss, _)| loss)
}

/// Loss plus its gradient with respect to every input vector, returned as
/// `(loss, d_tweets, d_replies)`.
pub fn infonce_loss_and_grad(
    tweets: &[Vec<f64>],
    replies: &[Vec<f64>],
    options: &InfoNceOptions,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (loss, grads) = compute(tweets, replies, options, true)?;
    let mut grads = grads.unwrap_or_default();
    let replies_grad = grads.split_off(tweets.len());
    Ok((loss, grads, replies_grad))
}

fn validate(tweets: &[Vec<f64>], replies: &[Vec<f64>], options: &InfoNceOptions) -> Result<()> {
    if tweets.len() != replies.len() {
        return Err(Error::LengthMismatch {
            left: tweets.len(),
            right: replies.len(),
        });
    }
    if tweets.len() < 2 {
        return Err(Error::BatchTooSmall(tweets.len()));
    }
    if !(options.temperature > 0.0 && options.temperature.is_finite()) {
        return Err(Error::Precondition(format!(
            "temperature must be positive, got {}",
            options.temperature
        )));
    }
    let dim = tweets[0].len();
    for (index, v) in tweets.iter().chain(replies).enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        let n = norm(v);
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::NonNormalizedInput { index, norm: n });
        }
    }
    Ok(())
}

/// Rows 0..N are tweets, N..2N replies. The positive of row `a` is its pair partner.
fn compute(
    tweets: &[Vec<f64>],
    replies: &[Vec<f64>],
    options: &InfoNceOptions,
    with_grad: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    validate(tweets, replies, options)?;
    let n = tweets.len();
    let rows: Vec<&Vec<f64>> = tweets.iter().chain(replies).collect();
    let tau = options.temperature;
    let anchors = if options.symmetric { 2 * n } else { n };
    let scale = 1.0 / anchors as f64;

    let mut grads = with_grad.then(|| vec![vec![0.0; rows[0].len()]; 2 * n]);
    let mut total = 0.0;
    for a in 0..anchors {
        let positive = (a + n) % (2 * n);
        let anchor_is_reply = a >= n;
        let candidates: Vec<usize> = (0..2 * n)
            .filter(|&c| c != a)
            .filter(|&c| {
                !(anchor_is_reply && options.negatives == NegativeSet::NoReplyReply && c >= n)
            })
            .collect();
        let scores: Vec<f64> = candidates.iter().map(|&c| dot(rows[a], rows[c]) / tau).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let log_z = max + sum.ln();
        let pos_score = dot(rows[a], rows[positive]) / tau;
        total += log_z - pos_score;

        if let Some(g) = grads.as_mut() {
            for (&c, s) in candidates.iter().zip(&scores) {
                let weight = (s - log_z).exp() - if c == positive { 1.0 } else { 0.0 };
                let coef = weight * scale / tau;
                for k in 0..rows[a].len() {
                    g[a][k] += coef * rows[c][k];
                    g[c][k] += coef * rows[a][k];
                }
            }
        }
    }
    Ok((total * scale, grads))
}
