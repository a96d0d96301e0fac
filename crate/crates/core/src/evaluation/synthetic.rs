//! Small generated datasets in the unified layout, for smoke tests and demos.
//!
//! Every text carries cue words for its gold labels, so a bag-of-words model
//! can learn each task. Labels are assigned round-robin so any split of at
//! least `labels` examples contains every class.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::registry::{ProblemType, TaskSpec};

use super::dataset::{Gold, LabeledDataset, Split};

const FILLER: &[&str] = &[
    "the", "a", "today", "just", "really", "so", "this", "that", "my", "our", "again", "now", "lol", "ok",
    "game", "day", "news", "time", "people", "weekend",
];

pub const SYNTHETIC_TARGET: &str = "climate";

/// Cue token for label `k`.
pub fn cue(k: usize) -> String {
    format!("cue{k}")
}

pub fn synthetic_dataset(spec: &TaskSpec, split: Split, n: usize, seed: u64) -> Result<LabeledDataset> {
    let split_seed = seed.wrapping_mul(31).wrapping_add(split as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let labels = spec.labels.len();
    if labels == 0 {
        return Err(Error::Precondition(format!("task `{}` has no labels", spec.name)));
    }
    let filler = |rng: &mut ChaCha8Rng, k: usize| -> Vec<String> {
        (0..k).map(|_| FILLER.choose(rng).expect("non-empty").to_string()).collect()
    };
    let id = |i: usize| format!("{}{i}", split.stem());

    match spec.problem_type {
        ProblemType::SingleLabel => {
            let examples = (0..n)
                .map(|i| {
                    let c = i % labels;
                    let mut words = filler(&mut rng, 3);
                    words.insert(rng.random_range(0..=words.len()), cue(c));
                    words.push(id(i));
                    (words.join(" "), c)
                })
                .collect();
            let ds = LabeledDataset::from_classes(spec, split, examples)?;
            Ok(if spec.needs_target { ds.with_target(SYNTHETIC_TARGET) } else { ds })
        }
        ProblemType::MultiLabel => {
            let mut texts = Vec::with_capacity(n);
            let mut gold = Vec::with_capacity(n);
            for i in 0..n {
                let mut set = vec![i % labels];
                if rng.random_bool(0.5) {
                    set.push(rng.random_range(0..labels));
                }
                set.sort_unstable();
                set.dedup();
                let mut words = filler(&mut rng, 3);
                words.extend(set.iter().map(|&k| cue(k)));
                words.push(id(i));
                texts.push(words.join(" "));
                gold.push(Gold::Labels(set));
            }
            LabeledDataset::from_parts(spec, split, texts, gold, None)
        }
        ProblemType::SequenceLabel => {
            let sentences = (0..n)
                .map(|i| {
                    let mut sentence: Vec<(String, String)> = Vec::new();
                    let entities = 1 + rng.random_range(0..2);
                    for e in 0..entities {
                        let k = rng.random_range(0..3);
                        for w in filler(&mut rng, k) {
                            sentence.push((w, "O".into()));
                        }
                        let ty = &spec.labels[(i + e) % labels];
                        let len = 1 + rng.random_range(0..2);
                        for j in 0..len {
                            let tag = if j == 0 { "B" } else { "I" };
                            sentence.push((format!("{ty}{}x{j}", id(i)), format!("{tag}-{ty}")));
                        }
                    }
                    sentence.push((id(i), "O".into()));
                    sentence
                })
                .collect();
            LabeledDataset::from_tagged(spec, split, sentences)
        }
        other => Err(Error::Precondition(format!("no synthetic data for {other:?} tasks"))),
    }
}

/// Writes train, validation and test splits of every task under `root`.
pub fn write_synthetic_benchmark(
    root: impl AsRef<Path>,
    tasks: &[TaskSpec],
    sizes: [usize; 3],
    seed: u64,
) -> Result<()> {
    for spec in tasks {
        for (split, n) in Split::ALL.into_iter().zip(sizes) {
            synthetic_dataset(spec, split, n, seed)?.write(root.as_ref())?;
        }
    }
    Ok(())
}
