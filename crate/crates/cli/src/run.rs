use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tnsupernet::relational::{
    extract_top_rules, rules_file, rules_text, ChainTask, KgDataset, KgEvaluator, RelationalGraph,
};
use tnsupernet::search::{search_with_observer, SearchConfig, SearchError, SearchReport, StepView, TaskEvaluator};
use tnsupernet::tabular::{load_benchmark_csv, TabularBenchmark, TabularEvaluator};
use tnsupernet::tn::{Checkpoint, CheckpointFormat};
use tnsupernet::{RankMap, Supernet, TnDistribution};

use crate::config::{KgSection, RunConfig};
use crate::error::{io_data, io_write, CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Tabular,
    Kg,
}

/// Where a run's task data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInputs {
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supernet: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

pub enum Task {
    Tabular {
        bench: Arc<TabularBenchmark>,
    },
    Kg {
        graph: Arc<RelationalGraph>,
        task: Arc<ChainTask>,
        filtered: bool,
    },
}

impl Task {
    pub fn load(inputs: &TaskInputs, kg: &KgSection) -> CliResult<Self> {
        match inputs.kind {
            TaskKind::Tabular => {
                let path = inputs
                    .benchmark
                    .as_ref()
                    .ok_or_else(|| CliError::config("tabular task needs --benchmark"))?;
                let supernet = match &inputs.supernet {
                    None => None,
                    Some(p) => Some(Arc::new(load_supernet(p)?)),
                };
                Ok(Task::Tabular {
                    bench: Arc::new(load_benchmark_csv(path, supernet)?),
                })
            }
            TaskKind::Kg => {
                let dir = inputs.data.as_ref().ok_or_else(|| CliError::config("kg task needs --data"))?;
                let ds = KgDataset::load_dir(dir)?;
                let target = kg.target.clone().unwrap_or_else(|| "target".to_string());
                let task = ChainTask::from_dataset(&ds, &target, kg.chain_options())?;
                Ok(Task::Kg {
                    graph: Arc::new(ds.graph),
                    task: Arc::new(task),
                    filtered: kg.filtered,
                })
            }
        }
    }

    pub fn supernet(&self) -> Arc<Supernet> {
        match self {
            Task::Tabular { bench } => bench.supernet().clone(),
            Task::Kg { task, .. } => Arc::new(task.supernet()),
        }
    }

    pub fn evaluator(&self) -> Box<dyn TaskEvaluator> {
        match self {
            Task::Tabular { bench } => Box::new(TabularEvaluator::new(bench.clone())),
            Task::Kg { graph, task, filtered } => Box::new(KgEvaluator::new(graph.clone(), task.clone(), *filtered)),
        }
    }
}

pub fn load_supernet(path: &Path) -> CliResult<Supernet> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(path, e))?;
    Ok(Supernet::from_json(&text)?)
}

/// sha256 of a file, or of `name NUL bytes` over a directory's split files.
pub fn dataset_hash(inputs: &TaskInputs) -> CliResult<String> {
    let mut h = Sha256::new();
    match inputs.kind {
        TaskKind::Tabular => {
            let p = inputs.benchmark.as_ref().expect("checked on load");
            h.update(std::fs::read(p).map_err(|e| io_data(p, e))?);
        }
        TaskKind::Kg => {
            let dir = inputs.data.as_ref().expect("checked on load");
            for name in ["facts.txt", "train.txt", "valid.txt", "test.txt"] {
                let p = dir.join(name);
                if p.exists() {
                    h.update(name.as_bytes());
                    h.update([0]);
                    h.update(std::fs::read(&p).map_err(|e| io_data(&p, e))?);
                }
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub report: PathBuf,
    pub trajectory: PathBuf,
    pub checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_text: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub task: TaskInputs,
    pub config: Value,
    pub supernet_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub artifacts: Artifacts,
}

#[derive(Serialize)]
struct RunReport<'a> {
    #[serde(flatten)]
    search: &'a SearchReport,
    task: Value,
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| io_write(path, e))
}

pub fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn fresh_distribution(supernet: Arc<Supernet>, cfg: &RunConfig, rank: usize, seed: u64) -> CliResult<TnDistribution> {
    let ranks = RankMap::uniform(&supernet, rank)?;
    Ok(TnDistribution::init(supernet, ranks, cfg.init, seed)?)
}

/// Runs one search and writes report, trajectory, checkpoints and manifest into `out`.
pub fn run_search(inputs: &TaskInputs, cfg: &RunConfig, out: &Path) -> CliResult<RunManifest> {
    let task = Task::load(inputs, &cfg.kg)?;
    let supernet = task.supernet();
    let mut d = fresh_distribution(supernet.clone(), cfg, cfg.rank, cfg.search.seed)?;
    let eval = task.evaluator();
    std::fs::create_dir_all(out).map_err(|e| io_write(out, e))?;

    let mut checkpoints = Vec::new();
    let every = cfg.search.checkpoint_every;
    let ck_dir = out.join("checkpoints");
    let report = {
        let mut observer = |v: &StepView<'_>| -> Result<(), SearchError> {
            if every > 0 && v.iteration % every == 0 {
                std::fs::create_dir_all(&ck_dir).map_err(|e| SearchError::Config(e.to_string()))?;
                let p = ck_dir.join(format!("step-{:06}.json", v.iteration));
                let doc = json!({
                    "iteration": v.iteration,
                    "checkpoint": Checkpoint::from_distribution(v.distribution),
                    "optimizer": v.optimizer,
                });
                std::fs::write(&p, to_pretty(&doc)).map_err(|e| SearchError::Config(e.to_string()))?;
                checkpoints.push(p);
            }
            Ok(())
        };
        search_with_observer(&mut d, eval.as_ref(), &cfg.search, &mut observer)?
    };

    let mut artifacts = Artifacts {
        report: out.join("report.json"),
        trajectory: out.join("trajectory.csv"),
        checkpoint: out.join("checkpoint.json"),
        checkpoints,
        rules_text: None,
        rules_json: None,
    };
    let summary = match &task {
        Task::Tabular { bench } => json!({
            "kind": "tabular",
            "benchmark": bench.metadata.name,
            "regret": bench.regret(&report.best_index),
            "best_val": bench.val_score(&report.best_index),
            "best_test": bench.test_score(&report.best_index),
            "oracle_best_test_index": bench.best_test_index(),
        }),
        Task::Kg { graph, task, filtered } => {
            let rules = extract_top_rules(&d, task, cfg.kg.top_k)?;
            let rt = out.join("rules.txt");
            let rj = out.join("rules.json");
            write_file(&rt, rules_text(task, &rules))?;
            write_file(&rj, to_pretty(&rules_file(task, &rules)))?;
            artifacts.rules_text = Some(rt);
            artifacts.rules_json = Some(rj);
            let ev = KgEvaluator::new(graph.clone(), task.clone(), *filtered);
            let best = task.rule_candidates(&report.best_index);
            let metrics = if task.test.is_empty() {
                Value::Null
            } else {
                serde_json::to_value(ev.rule_metrics(&best, &[1, 3, 10])?).expect("serializable")
            };
            json!({
                "kind": "kg",
                "target": task.target_name,
                "best_rule": task.format_rule(&task.rule(&report.best_index, report.best_probability)),
                "test_metrics": metrics,
                "filtered": filtered,
            })
        }
    };
    write_file(&artifacts.report, to_pretty(&RunReport { search: &report, task: summary }))?;
    write_file(&artifacts.trajectory, report.trajectory_csv())?;
    Checkpoint::from_distribution(&d)
        .write(&artifacts.checkpoint, CheckpointFormat::Json)
        .map_err(|e| io_write(&artifacts.checkpoint, e))?;

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        task: inputs.clone(),
        config: cfg.snapshot(),
        supernet_hash: supernet.content_hash(),
        dataset_hash: dataset_hash(inputs)?,
        seed: cfg.search.seed,
        artifacts,
    };
    write_file(&out.join("manifest.json"), to_pretty(&manifest))?;
    Ok(manifest)
}

/// Search config with its seed replaced.
pub fn with_seed(c: &SearchConfig, seed: u64) -> SearchConfig {
    let mut c = c.clone();
    c.seed = seed;
    c
}
