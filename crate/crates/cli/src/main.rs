//! `tnsupernet` command-line tool.

mod ablate;
mod config;
mod error;
mod kg_cmd;
mod run;
mod tabular_cmd;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::{CliError, CliResult};
use run::{TaskInputs, TaskKind};

#[derive(Parser)]
#[command(name = "tnsupernet", version, about = "Tensor-network distributions over supernet subgraphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one search and write report, trajectory, checkpoint and manifest.
    Search(SearchArgs),
    /// Rank sweep and/or encoding comparison over seeds; CSV output.
    Ablate(ablate::AblateArgs),
    /// Numerical self-checks on random cores.
    Verify(VerifyArgs),
    #[command(subcommand)]
    Tabular(tabular_cmd::TabularCmd),
    #[command(subcommand)]
    Kg(kg_cmd::KgCmd),
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    /// Tabular benchmark CSV.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Supernet JSON for the benchmark (inferred as a chain when absent).
    #[arg(long)]
    pub supernet: Option<PathBuf>,
    /// KG directory with train/valid/test (and optional facts) files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Target relation of a KG task.
    #[arg(long)]
    pub target: Option<String>,
}

impl TaskArgs {
    pub fn inputs(&self, forced: Option<TaskKind>) -> CliResult<TaskInputs> {
        let kind = forced
            .or(self.task)
            .ok_or_else(|| CliError::config("missing --task (tabular or kg)"))?;
        Ok(TaskInputs {
            kind,
            benchmark: self.benchmark.clone(),
            supernet: self.supernet.clone(),
            data: self.data.clone(),
        })
    }

    pub fn run_config(&self, path: Option<&std::path::Path>, o: &Overrides) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(path, o)?;
        if let Some(t) = &self.target {
            cfg.kg.target = Some(t.clone());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    /// Run config (TOML, or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Replay the run recorded in this manifest.
    #[arg(long, conflicts_with_all = ["config", "task", "benchmark", "data", "supernet", "target"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "chain")]
    topology: tabular_cmd::TopologyArg,
    /// Number of edges.
    #[arg(long, default_value_t = 3)]
    edges: usize,
    /// Choices per edge.
    #[arg(long, default_value_t = 3)]
    choices: usize,
    /// Supernet JSON; overrides the topology flags.
    #[arg(long)]
    supernet: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

pub fn cmd_search(a: &SearchArgs, forced: Option<TaskKind>) -> CliResult<()> {
    let (inputs, cfg) = match &a.manifest {
        Some(p) => {
            let m: run::RunManifest = config::read_typed(p)?;
            if forced.is_some_and(|k| k != m.task.kind) {
                return Err(CliError::config("manifest task kind does not match the subcommand"));
            }
            (m.task, RunConfig::from_value(m.config)?)
        }
        None => (a.task.inputs(forced)?, a.task.run_config(a.config.as_deref(), &a.overrides)?),
    };
    let m = run::run_search(&inputs, &cfg, &a.out)?;
    println!("report={}", m.artifacts.report.display());
    println!("manifest={}", a.out.join("manifest.json").display());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let supernet = match &a.supernet {
        Some(p) => run::load_supernet(p)?,
        None => tabular_cmd::build_supernet(a.topology.into(), &vec![a.choices; a.edges])?,
    };
    if a.rank == 0 {
        return Err(CliError::config("rank must be at least 1"));
    }
    let lines = verify::run_checks(Arc::new(supernet), a.rank, a.seed, a.corrupt_gradient)?;
    for l in &lines {
        println!("{}", l.render());
    }
    verify::verdict(&lines)
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("TNSUPERNET_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config(format!("TNSUPERNET_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.cmd {
        Cmd::Search(a) => cmd_search(&a, None),
        Cmd::Ablate(a) => ablate::cmd_ablate(&a),
        Cmd::Verify(a) => cmd_verify(&a),
        Cmd::Tabular(c) => tabular_cmd::run(c),
        Cmd::Kg(c) => kg_cmd::run(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let err = CliError::config(first);
            let _ = e.print();
            eprintln!("{}", err.diagnostic());
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
