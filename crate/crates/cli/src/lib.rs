//! Subcommands of the `tweetkit` binary.

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tweetkit::evaluation::{
    evaluate_task_with, finetune, load_dataset, run_benchmark, write_synthetic_benchmark, BenchmarkConfig,
    CellLog, FinetuneGrid, Finetuner, NativeFinetuner, OracleFinetuner, SpanAveraging, Split,
};
use tweetkit::native::NativeConfig;
use tweetkit::registry::{builtin_tasks, ModelCard, TaskSpec};
use tweetkit::Registry;
use tweetkit_ingest::SearchClient;
use tweetkit_service::demo::{demo_registry, demo_search_client, demo_upstream};
use tweetkit_service::{AppState, ServiceConfig};
use tweetkit_transformer::{default_store, Hub};

#[derive(Debug, Parser)]
#[command(name = "tweetkit", version, about = "NLP for tweets: evaluate, fine-tune, benchmark and serve models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a model on one task's split with the task's official metric.
    Evaluate(EvaluateArgs),
    /// Grid-search learning rate and epochs on validation, then test the selected model.
    Finetune(FinetuneArgs),
    /// Fine-tune and test on every task, once per seed, and print the score table.
    Benchmark(BenchmarkArgs),
    /// Run the HTTP/JSON service.
    Serve(ServeArgs),
    /// Write a small synthetic dataset for every task, in the benchmark layout.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum AveragingArg {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Args)]
pub struct ModelStoreArgs {
    /// Model cache directory; defaults to TWEETKIT_CACHE_DIR or ~/.cache/tweetkit.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Use cached files only.
    #[arg(long)]
    pub offline: bool,
}

impl ModelStoreArgs {
    fn hub(&self) -> Hub {
        let hub = Hub::from_env();
        let hub = match &self.cache_dir {
            Some(dir) => hub.with_cache_dir(dir),
            None => hub,
        };
        if self.offline {
            hub.offline(true)
        } else {
            hub
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub task: String,
    /// Directory holding `<task>/<split>_text.txt` and friends.
    #[arg(long)]
    pub data: PathBuf,
    /// `hf://org/name`, a local directory, or `native:<file>`. `{seed}` is
    /// replaced by each seed and the scores averaged.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "main")]
    pub revision: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Entity-level F1 pooling for NER.
    #[arg(long, value_enum, default_value = "macro")]
    pub ner_averaging: AveragingArg,
    #[command(flatten)]
    pub store: ModelStoreArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-5,2e-5,5e-5")]
    pub learning_rates: Vec<f64>,
    /// Epoch counts, e.g. `1-10` or `2,4,8`.
    #[arg(long, default_value = "1-10")]
    pub epochs: Epochs,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Encoder size of `native:init` models.
    #[arg(long, default_value_t = NativeConfig::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = NativeConfig::default().buckets)]
    pub buckets: usize,
}

impl GridArgs {
    fn native_config(&self) -> NativeConfig {
        NativeConfig {
            dim: self.dim,
            buckets: self.buckets,
            ..NativeConfig::default()
        }
    }

    fn grid(&self) -> FinetuneGrid {
        FinetuneGrid {
            learning_rates: self.learning_rates.clone(),
            epochs: self.epochs.0.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

/// Epoch counts written as `a-b` (inclusive) or a comma-separated list.
#[derive(Clone, Debug, PartialEq)]
pub struct Epochs(pub Vec<usize>);

impl std::str::FromStr for Epochs {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_epochs(s).map(Epochs)
    }
}

fn parse_epochs(s: &str) -> std::result::Result<Vec<usize>, String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    let out: Vec<usize> = match s.split_once('-') {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a > b {
                return Err(format!("empty range {s}"));
            }
            (a..=b).collect()
        }
        None => s.split(',').map(parse).collect::<std::result::Result<_, _>>()?,
    };
    if out.contains(&0) {
        return Err("epoch counts start at 1".into());
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Base model: `native:init`, `native:init?seed=N` or `native:<file>`.
    #[arg(long, default_value = "native:init")]
    pub model: String,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Save the selected model here; load it later as `native:<file>`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// A `native:` base model, or `oracle` to answer with the gold labels.
    #[arg(long, default_value = "native:init")]
    pub model: String,
    /// Subset of tasks; all nine by default.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Model cards, one JSON object per line. The bundled manifest when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub store: ModelStoreArgs,
    /// Serve stub models and a canned tweet corpus; needs no network.
    #[arg(long)]
    pub demo: bool,
    #[arg(long, default_value_t = 8)]
    pub pool_size: usize,
    /// Allowed browser origin; any origin when absent.
    #[arg(long)]
    pub cors_origin: Option<String>,
    #[arg(long, default_value_t = 60)]
    pub hashtag_timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', default_value = "64,32,100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate(a) => print_json(&evaluate(&a)?),
        Command::Finetune(a) => {
            let report = finetune_cmd(&a)?;
            write_report(a.report.as_deref(), &report)?;
            print_json(&report)
        }
        Command::Benchmark(a) => {
            let report = benchmark(&a)?;
            write_report(a.report.as_deref(), &report)?;
            print!("{}", report.render_table());
            Ok(())
        }
        Command::Serve(a) => serve(a),
        Command::SynthData(a) => {
            let sizes: [usize; 3] = a
                .sizes
                .as_slice()
                .try_into()
                .context("--sizes takes three numbers: train,validation,test")?;
            write_synthetic_benchmark(&a.out, &builtin_tasks(), sizes, a.seed)?;
            eprintln!("wrote {} tasks under {}", builtin_tasks().len(), a.out.display());
            Ok(())
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_report(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn task_spec(name: &str) -> Result<TaskSpec> {
    builtin_tasks()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| anyhow::anyhow!("unknown task `{name}`"))
}

#[derive(Debug, Serialize)]
pub struct EvaluationReport {
    pub task: String,
    pub model: String,
    pub split: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub run_scores: Vec<f64>,
    pub score: f64,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<EvaluationReport> {
    let spec = task_spec(&a.task)?;
    let registry = Registry::new(Arc::new(default_store(a.store.hub())));
    let dataset = load_dataset(&spec, a.split.into(), &a.data)?;
    let averaging = match a.ner_averaging {
        AveragingArg::Macro => SpanAveraging::Macro,
        AveragingArg::Micro => SpanAveraging::Micro,
    };
    let uris: Vec<(Option<u64>, String)> = if a.model.contains("{seed}") {
        a.seeds.iter().map(|s| (Some(*s), a.model.replace("{seed}", &s.to_string()))).collect()
    } else {
        vec![(None, a.model.clone())]
    };
    let mut run_scores = Vec::new();
    for (_, uri) in &uris {
        let handle = registry.load_card(&ModelCard::new(&spec, uri.clone(), a.revision.clone()))?;
        let score = evaluate_task_with(&handle, &dataset, averaging)?;
        log::info!("{}: {uri} scored {score:.4}", spec.name);
        run_scores.push(score);
    }
    Ok(EvaluationReport {
        task: spec.name.clone(),
        model: a.model.clone(),
        split: dataset.split.to_string(),
        metric: spec.metric.abbreviation().to_string(),
        seeds: uris.iter().filter_map(|(s, _)| *s).collect(),
        score: run_scores.iter().sum::<f64>() / run_scores.len() as f64,
        run_scores,
    })
}

#[derive(Debug, Serialize)]
pub struct FinetuneReport {
    pub task: String,
    pub model: String,
    pub selected: CellLog,
    pub grid: Vec<CellLog>,
    /// Selected model on the test split, when one exists.
    pub test_score: Option<f64>,
    pub saved_to: Option<PathBuf>,
}

pub fn finetune_cmd(a: &FinetuneArgs) -> Result<FinetuneReport> {
    let spec = task_spec(&a.task)?;
    let finetuner = NativeFinetuner::from_uri(&a.model, a.grid.native_config())?.with_batch_size(a.grid.batch_size);
    let train = load_dataset(&spec, Split::Train, &a.data)?;
    let val = load_dataset(&spec, Split::Validation, &a.data)?;
    let outcome = finetune(&finetuner, &train, &val, &a.grid.grid())?;
    let test_score = match load_dataset(&spec, Split::Test, &a.data) {
        Ok(test) => Some(evaluate_task_with(&outcome.handle, &test, SpanAveraging::Macro)?),
        Err(e) => {
            log::warn!("no test split: {e}");
            None
        }
    };
    if let Some(path) = &a.output {
        let s = &outcome.selected;
        finetuner
            .train_model(&spec, &train, s.learning_rate, s.epochs, s.seed)?
            .save(path)?;
    }
    Ok(FinetuneReport {
        task: spec.name.clone(),
        model: a.model.clone(),
        selected: outcome.selected,
        grid: outcome.log,
        test_score,
        saved_to: a.output.clone(),
    })
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<tweetkit::evaluation::BenchmarkReport> {
    let tasks: Vec<TaskSpec> = if a.tasks.is_empty() {
        builtin_tasks()
    } else {
        a.tasks.iter().map(|t| task_spec(t)).collect::<Result<_>>()?
    };
    let finetuner: Box<dyn Finetuner> = if a.model == "oracle" {
        let mut oracle = OracleFinetuner::default();
        for spec in &tasks {
            for split in [Split::Validation, Split::Test] {
                match load_dataset(spec, split, &a.data) {
                    Ok(ds) => oracle.add(ds),
                    Err(e) => log::warn!("{}: {e}", spec.name),
                }
            }
        }
        Box::new(oracle)
    } else {
        Box::new(NativeFinetuner::from_uri(&a.model, a.grid.native_config())?.with_batch_size(a.grid.batch_size))
    };
    let config = BenchmarkConfig {
        seeds: a.grid.seeds.clone(),
        grid: a.grid.grid(),
    };
    Ok(run_benchmark(finetuner.as_ref(), &a.data, &tasks, &config)?)
}

/// Registry, search client and settings for `serve`.
pub fn service_state(a: &ServeArgs) -> Result<AppState> {
    let (registry, ingest) = if a.demo {
        (demo_registry(), Some(demo_search_client(demo_upstream())))
    } else {
        let store = Arc::new(default_store(a.store.hub()));
        let registry = match &a.manifest {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Registry::from_manifest(store, &text)?
            }
            None => Registry::builtin(store),
        };
        let ingest = match SearchClient::from_env() {
            Ok(client) => Some(client),
            Err(e) => {
                log::warn!("hashtag analysis disabled: {e}");
                None
            }
        };
        (registry, ingest)
    };
    let Some(pool_size) = NonZeroUsize::new(a.pool_size) else {
        bail!("--pool-size must be at least 1");
    };
    let config = ServiceConfig {
        pool_size,
        hashtag_timeout: Duration::from_secs(a.hashtag_timeout_secs),
        cors_origin: a.cors_origin.clone(),
        ..ServiceConfig::default()
    };
    Ok(AppState::new(Arc::new(registry), ingest.map(Arc::new), config))
}

fn serve(a: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let state = service_state(&a)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(tweetkit_service::serve(addr, state))?;
    Ok(())
}
