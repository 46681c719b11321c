use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Subcommand, ValueEnum};
use tnsupernet::tabular::{generate_synthetic, load_benchmark_csv, Correlation, SyntheticSpec, Topology};
use tnsupernet::{SubgraphIndex, Supernet};

use crate::config::read_typed;
use crate::error::{CliError, CliResult};
use crate::run::{load_supernet, write_file, TaskKind};
use crate::{cmd_search, SearchArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TopologyArg {
    Chain,
    Ring,
    Star,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Chain => Topology::Chain,
            TopologyArg::Ring => Topology::Ring,
            TopologyArg::Star => Topology::Star,
        }
    }
}

pub fn build_supernet(t: Topology, choices: &[usize]) -> CliResult<Supernet> {
    if choices.is_empty() || choices.contains(&0) {
        return Err(CliError::config("need at least one edge with at least one choice"));
    }
    let labels: Vec<Vec<String>> = choices.iter().map(|&c| (0..c).map(|k| format!("op{k}")).collect()).collect();
    Ok(t.build(&t.to_string(), &labels)?)
}

#[derive(Subcommand)]
pub enum TabularCmd {
    /// Write a synthetic benchmark CSV with a planted optimum.
    Generate(GenerateArgs),
    /// `search --task tabular`.
    Search(SearchArgs),
    /// Test regret of an index or of a report's best index.
    Regret(RegretArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic spec file (TOML/JSON); replaces the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Choices per edge, comma separated.
    #[arg(long, default_value = "5,5,5", value_delimiter = ',')]
    choices: Vec<usize>,
    #[arg(long, value_enum, default_value = "chain")]
    topology: TopologyArg,
    /// Planted index, 1-based, comma separated.
    #[arg(long, value_delimiter = ',')]
    planted: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.3)]
    gap: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
    /// Pairwise bonus strength; absent means independent edges.
    #[arg(long)]
    pairwise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the supernet JSON here.
    #[arg(long)]
    supernet_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegretArgs {
    #[arg(long)]
    benchmark: PathBuf,
    #[arg(long)]
    supernet: Option<PathBuf>,
    /// report.json from a search run.
    #[arg(long, conflicts_with = "index")]
    report: Option<PathBuf>,
    /// 1-based index, comma separated.
    #[arg(long, value_delimiter = ',')]
    index: Option<Vec<usize>>,
}

fn spec_from_flags(a: &GenerateArgs) -> CliResult<SyntheticSpec> {
    let planted = match &a.planted {
        Some(p) => SubgraphIndex::from_one_based(p).ok_or_else(|| CliError::config("--planted entries are 1-based"))?,
        None => SubgraphIndex::new(vec![0; a.choices.len()]),
    };
    Ok(SyntheticSpec {
        choices: a.choices.clone(),
        topology: a.topology.into(),
        planted,
        gap: a.gap,
        noise_sd: a.noise_sd,
        correlation: match a.pairwise {
            None => Correlation::Independent,
            Some(strength) => Correlation::Pairwise { strength },
        },
        seed: a.seed,
    })
}

fn generate(a: &GenerateArgs) -> CliResult<()> {
    let spec = match &a.spec {
        Some(p) => read_typed(p)?,
        None => spec_from_flags(a)?,
    };
    let bench = generate_synthetic(&spec)?;
    bench.save_csv(&a.out)?;
    if let Some(p) = &a.supernet_out {
        write_file(p, bench.supernet().to_json())?;
    }
    println!(
        "rows={} planted={} well_separated={}",
        bench.len(),
        spec.planted,
        spec.well_separated()
    );
    Ok(())
}

fn regret(a: &RegretArgs) -> CliResult<()> {
    let supernet = match &a.supernet {
        Some(p) => Some(Arc::new(load_supernet(p)?)),
        None => None,
    };
    let bench = load_benchmark_csv(&a.benchmark, supernet)?;
    let idx = match (&a.report, &a.index) {
        (Some(p), _) => {
            let v: serde_json::Value = read_typed(p)?;
            serde_json::from_value(v["best_index"].clone())
                .map_err(|e| CliError::data(format!("{}: best_index: {e}", p.display())))?
        }
        (None, Some(i)) => SubgraphIndex::from_one_based(i).ok_or_else(|| CliError::config("--index entries are 1-based"))?,
        (None, None) => return Err(CliError::config("give --report or --index")),
    };
    bench.supernet().validate_index(&idx)?;
    let r = bench
        .regret(&idx)
        .ok_or_else(|| CliError::data(format!("benchmark has no row for {idx}")))?;
    println!("index={idx} regret={r} best_test_index={}", bench.best_test_index());
    Ok(())
}

pub fn run(c: TabularCmd) -> CliResult<()> {
    match c {
        TabularCmd::Generate(a) => generate(&a),
        TabularCmd::Search(a) => cmd_search(&a, Some(TaskKind::Tabular)),
        TabularCmd::Regret(a) => regret(&a),
    }
}
