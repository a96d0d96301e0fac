//! Classification, span and correlation metrics. All scores lie in [0, 1]
//! (correlations in [-1, 1]).

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ner::EntitySpan;

/// Per-class true positives, false positives and false negatives.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn from_single(gold: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        check_lengths(gold.len(), pred.len())?;
        let mut c = Self::new(classes);
        for (&g, &p) in gold.iter().zip(pred) {
            check_index(g, classes)?;
            check_index(p, classes)?;
            if g == p {
                c.tp[g] += 1;
            } else {
                c.fp[p] += 1;
                c.fn_[g] += 1;
            }
        }
        Ok(c)
    }

    pub fn from_multi(gold: &[Vec<usize>], pred: &[Vec<usize>], classes: usize) -> Result<Self> {
        check_lengths(gold.len(), pred.len())?;
        let mut c = Self::new(classes);
        for (g, p) in gold.iter().zip(pred) {
            let g: BTreeSet<usize> = g.iter().copied().collect();
            let p: BTreeSet<usize> = p.iter().copied().collect();
            for &x in g.iter().chain(&p) {
                check_index(x, classes)?;
            }
            for k in 0..classes {
                match (g.contains(&k), p.contains(&k)) {
                    (true, true) => c.tp[k] += 1,
                    (false, true) => c.fp[k] += 1,
                    (true, false) => c.fn_[k] += 1,
                    (false, false) => {}
                }
            }
        }
        Ok(c)
    }

    /// F1 of class `k`; 0 when the class has neither predictions nor gold instances.
    pub fn f1(&self, k: usize) -> f64 {
        f1_from_counts(self.tp[k], self.fp[k], self.fn_[k])
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        let support = self.tp[k] + self.fn_[k];
        (support > 0).then(|| self.tp[k] as f64 / support as f64)
    }
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::DegenerateInput("no examples".into()));
    }
    Ok(())
}

fn check_index(i: usize, classes: usize) -> Result<()> {
    if i >= classes {
        return Err(Error::Precondition(format!("label index {i} outside {classes} classes")));
    }
    Ok(())
}

/// Unweighted mean of per-class F1 over all `classes`.
pub fn macro_f1(gold: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    let c = ConfusionCounts::from_single(gold, pred, classes)?;
    Ok((0..classes).map(|k| c.f1(k)).sum::<f64>() / classes as f64)
}

pub fn f1_of_class(gold: &[usize], pred: &[usize], class: usize) -> Result<f64> {
    let classes = gold.iter().chain(pred).copied().max().unwrap_or(0).max(class) + 1;
    Ok(ConfusionCounts::from_single(gold, pred, classes)?.f1(class))
}

/// Unweighted mean of per-class recall over the classes present in `gold`.
pub fn macro_recall(gold: &[usize], pred: &[usize], classes: usize) -> Result<f64> {
    let c = ConfusionCounts::from_single(gold, pred, classes)?;
    let recalls: Vec<f64> = (0..classes).filter_map(|k| c.recall(k)).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Mean F1 of the listed classes.
pub fn avg_f_of_classes(gold: &[usize], pred: &[usize], classes: &[usize]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Precondition("no classes to average".into()));
    }
    let n = gold.iter().chain(pred).chain(classes).copied().max().unwrap_or(0) + 1;
    let c = ConfusionCounts::from_single(gold, pred, n)?;
    Ok(classes.iter().map(|&k| c.f1(k)).sum::<f64>() / classes.len() as f64)
}

/// Stance label indices in the bundled label order (none, against, favor).
pub const STANCE_AGAINST: usize = 1;
pub const STANCE_FAVOR: usize = 2;

/// Mean of the favor and against F1 scores.
pub fn stance_avg_f(gold: &[usize], pred: &[usize]) -> Result<f64> {
    avg_f_of_classes(gold, pred, &[STANCE_FAVOR, STANCE_AGAINST])
}

/// Per-label binary F1 averaged over all `classes`.
pub fn multilabel_macro_f1(gold: &[Vec<usize>], pred: &[Vec<usize>], classes: usize) -> Result<f64> {
    let c = ConfusionCounts::from_multi(gold, pred, classes)?;
    Ok((0..classes).map(|k| c.f1(k)).sum::<f64>() / classes as f64)
}

fn span_counts(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<Vec<(String, usize, usize, usize)>> {
    check_lengths(gold.len(), pred.len())?;
    let mut types: BTreeSet<&str> = BTreeSet::new();
    let mut counts: Vec<(String, usize, usize, usize)> = Vec::new();
    let key = |s: &EntitySpan| (s.start, s.end, s.entity_type.clone());
    for (g, p) in gold.iter().zip(pred) {
        let gs: HashSet<_> = g.iter().map(key).collect();
        let ps: HashSet<_> = p.iter().map(key).collect();
        types.extend(g.iter().chain(p).map(|s| s.entity_type.as_str()));
        for t in &types {
            if !counts.iter().any(|c| c.0 == *t) {
                counts.push((t.to_string(), 0, 0, 0));
            }
        }
        for c in counts.iter_mut() {
            c.1 += gs.iter().filter(|s| s.2 == c.0 && ps.contains(*s)).count();
            c.2 += ps.iter().filter(|s| s.2 == c.0 && !gs.contains(*s)).count();
            c.3 += gs.iter().filter(|s| s.2 == c.0 && !ps.contains(*s)).count();
        }
    }
    counts.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(counts)
}

/// Exact-match span F1 per entity type, averaged over the types that occur
/// in gold or predictions.
pub fn span_macro_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<f64> {
    let counts = span_counts(gold, pred)?;
    if counts.is_empty() {
        return Err(Error::DegenerateInput("no entity spans in gold or predictions".into()));
    }
    Ok(counts.iter().map(|c| f1_from_counts(c.1, c.2, c.3)).sum::<f64>() / counts.len() as f64)
}

/// Exact-match span F1 over all spans pooled.
pub fn span_micro_f1(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<f64> {
    let counts = span_counts(gold, pred)?;
    if counts.is_empty() {
        return Err(Error::DegenerateInput("no entity spans in gold or predictions".into()));
    }
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.1, acc.1 + c.2, acc.2 + c.3));
    Ok(f1_from_counts(tp, fp, fn_))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
