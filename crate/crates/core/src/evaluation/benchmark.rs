//! Multi-seed benchmark runs and their reports.

use std::fmt::Write as _;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::TaskSpec;

use super::dataset::{load_dataset, LabeledDataset, Split};
use super::finetune::{finetune, CellLog, FinetuneGrid, Finetuner};
use super::evaluate_task;

/// Name of the published row that [`reference_scores`] reproduces.
pub const REFERENCE_MODEL: &str = "TimeLMs-21";

/// Published full-scale test scores (percent) of the default English model.
pub fn reference_scores() -> IndexMap<&'static str, f64> {
    IndexMap::from([
        ("emoji", 34.0),
        ("emotion", 80.2),
        ("hate", 55.1),
        ("irony", 64.5),
        ("offensive", 82.2),
        ("sentiment", 73.7),
        ("stance", 72.9),
        ("topic", 58.8),
        ("ner", 59.7),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seeds: Vec<u64>,
    /// Learning rates and epochs searched per run; its seeds are replaced by each run's seed.
    pub grid: FinetuneGrid,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            grid: FinetuneGrid::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub metric: String,
    /// Mean of `run_scores`; absent when the task failed.
    pub score: Option<f64>,
    pub run_scores: Vec<f64>,
    /// Grid log of each run.
    pub grid_logs: Vec<Vec<CellLog>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub seeds: Vec<u64>,
    pub runs: usize,
    pub tasks: IndexMap<String, TaskResult>,
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Loads the three splits of every task from `data_root`, fine-tunes and
/// tests once per seed, and averages. A failing task is recorded and the
/// remaining tasks still run.
pub fn run_benchmark(
    finetuner: &dyn Finetuner,
    data_root: &Path,
    tasks: &[TaskSpec],
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    let grid = FinetuneGrid {
        seeds: vec![0],
        ..config.grid.clone()
    };
    grid.validate()?;
    if config.seeds.is_empty() {
        return Err(crate::error::Error::EmptyGrid);
    }
    let mut report = BenchmarkReport {
        model: finetuner.base_uri().to_string(),
        seeds: config.seeds.clone(),
        runs: config.seeds.len(),
        tasks: IndexMap::new(),
    };
    for spec in tasks {
        let mut result = TaskResult {
            metric: spec.metric.abbreviation().to_string(),
            score: None,
            run_scores: Vec::new(),
            grid_logs: Vec::new(),
            error: None,
        };
        let outcome = load_splits(spec, data_root).and_then(|(train, val, test)| {
            for &seed in &config.seeds {
                let run_grid = grid.clone().with_seeds(vec![seed]);
                let tuned = finetune(finetuner, &train, &val, &run_grid)?;
                result.run_scores.push(evaluate_task(&tuned.handle, &test)?);
                result.grid_logs.push(tuned.log);
            }
            Ok(())
        });
        match outcome {
            Ok(()) => result.score = mean(&result.run_scores),
            Err(e) => {
                log::error!("task `{}` failed: {e}", spec.name);
                result.error = Some(e.to_string());
            }
        }
        report.tasks.insert(spec.name.clone(), result);
    }
    Ok(report)
}

fn load_splits(spec: &TaskSpec, root: &Path) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    Ok((
        load_dataset(spec, Split::Train, root)?,
        load_dataset(spec, Split::Validation, root)?,
        load_dataset(spec, Split::Test, root)?,
    ))
}

impl BenchmarkReport {
    /// Mean score as a percentage rounded to one decimal.
    pub fn percent(&self, task: &str) -> Option<f64> {
        let s = self.tasks.get(task)?.score?;
        Some((s * 1000.0).round() / 10.0)
    }

    /// Task columns, a metric row, then one row of percentages. Failed tasks show `-`.
    pub fn render_table(&self) -> String {
        self.render_with_rows(&[])
    }

    /// As [`Self::render_table`] with extra labelled rows of percentages,
    /// e.g. the published reference scores.
    pub fn render_with_rows(&self, extra: &[(&str, &IndexMap<&str, f64>)]) -> String {
        let names: Vec<&String> = self.tasks.keys().collect();
        let label_width = extra
            .iter()
            .map(|(l, _)| l.chars().count())
            .chain([self.model.chars().count(), "Metric".len()])
            .max()
            .unwrap_or(0);
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let row = |out: &mut String, label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<label_width$}");
            for c in cells {
                let _ = write!(out, "  {c:>width$}");
            }
            out.push('\n');
        };
        row(&mut out, "", names.iter().map(|n| n.to_string()).collect());
        row(
            &mut out,
            "Metric",
            self.tasks.values().map(|t| t.metric.clone()).collect(),
        );
        row(
            &mut out,
            &self.model,
            names
                .iter()
                .map(|n| self.percent(n).map_or("-".into(), |p| format!("{p:.1}")))
                .collect(),
        );
        for (label, values) in extra {
            row(
                &mut out,
                label,
                names
                    .iter()
                    .map(|n| values.get(n.as_str()).map_or("-".into(), |p| format!("{p:.1}")))
                    .collect(),
            );
        }
        out
    }
}
