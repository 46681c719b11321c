use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;
use tnsupernet::relational::{
    extract_top_rules, generate_planted_kg, rules_file, rules_text, ChainOptions, ChainRule, ChainTask, FinalSplit,
    KgDataset, KgEvaluator, PlantedKgSpec, RelationalGraph, RulesFile, TARGET_NAME,
};
use tnsupernet::tn::Checkpoint;

use crate::config::{read_structured, read_typed, KgSection};
use crate::error::{io_write, CliError, CliResult};
use crate::run::{to_pretty, write_file, TaskKind};
use crate::{cmd_search, SearchArgs};

#[derive(Subcommand)]
pub enum KgCmd {
    /// Write a synthetic KG with a planted chain rule.
    Synth(SynthArgs),
    /// `search --task kg`.
    Search(SearchArgs),
    /// Ranking metrics of given rules on a held-out split.
    Eval(EvalArgs),
    /// Top rules of a saved checkpoint.
    Rules(RulesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Planted-KG spec file (TOML/JSON); replaces the flags below.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    entities: usize,
    #[arg(long, default_value_t = 6)]
    relations: usize,
    /// Planted chain as 0-based base relation ids, comma separated.
    #[arg(long, default_value = "1,4", value_delimiter = ',')]
    rule: Vec<usize>,
    #[arg(long, default_value_t = 0.03)]
    density: f64,
    #[arg(long, default_value_t = 1.0)]
    coverage: f64,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = TARGET_NAME)]
    target: String,
    /// rules.json from a search run.
    #[arg(long, conflicts_with = "rule", required_unless_present = "rule")]
    rules: Option<PathBuf>,
    /// One rule as relation labels, comma separated.
    #[arg(long, value_delimiter = ',')]
    rule: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Rank against every entity, including other true tails.
    #[arg(long)]
    unfiltered: bool,
    /// Write metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RulesArgs {
    #[arg(long)]
    data: PathBuf,
    /// checkpoint.json (or binary) from a KG search.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config whose `kg` section built the task.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Write rules JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn triple_lines(graph: &RelationalGraph, rel: &str, pairs: &[(u32, u32)]) -> String {
    let mut s = String::new();
    for &(h, t) in pairs {
        let _ = writeln!(s, "{}\t{rel}\t{}", graph.entities()[h as usize], graph.entities()[t as usize]);
    }
    s
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let spec: PlantedKgSpec = match &a.spec {
        Some(p) => read_typed(p)?,
        None => PlantedKgSpec {
            n_entities: a.entities,
            n_relations: a.relations,
            rule: a.rule.clone(),
            density: a.density,
            coverage: a.coverage,
            noise: a.noise,
            seed: a.seed,
            options: ChainOptions::default(),
        },
    };
    let kg = generate_planted_kg(&spec)?;
    let g = &kg.graph;
    std::fs::create_dir_all(&a.out).map_err(|e| io_write(&a.out, e))?;

    let mut facts = String::new();
    for &(h, r, t) in g.triples() {
        if r != kg.task.target {
            let e = g.entities();
            let _ = writeln!(facts, "{}\t{}\t{}", e[h as usize], g.relations()[r as usize], e[t as usize]);
        }
    }
    write_file(&a.out.join("facts.txt"), facts)?;
    write_file(&a.out.join("train.txt"), triple_lines(g, TARGET_NAME, &kg.task.train))?;
    write_file(&a.out.join("valid.txt"), triple_lines(g, TARGET_NAME, &kg.task.valid))?;
    write_file(&a.out.join("test.txt"), triple_lines(g, TARGET_NAME, &kg.task.test))?;
    let doc = json!({
        "spec": spec,
        "planted": kg.planted,
        "rule_text": kg.task.format_rule(&kg.planted),
    });
    write_file(&a.out.join("planted.json"), to_pretty(&doc))?;
    println!(
        "entities={} triples={} train={} valid={} test={} planted={}",
        g.num_entities(),
        g.triples().len(),
        kg.task.train.len(),
        kg.task.valid.len(),
        kg.task.test.len(),
        kg.planted.relations.join(",")
    );
    Ok(())
}

fn load_task(data: &Path, target: &str, opts: ChainOptions) -> CliResult<(Arc<RelationalGraph>, Arc<ChainTask>)> {
    let ds = KgDataset::load_dir(data)?;
    let task = ChainTask::from_dataset(&ds, target, opts)?;
    Ok((Arc::new(ds.graph), Arc::new(task)))
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let rules: Vec<ChainRule> = match (&a.rules, &a.rule) {
        (Some(p), _) => {
            let f: RulesFile = read_typed(p)?;
            if f.target != a.target {
                return Err(CliError::config(format!(
                    "rules file is for target {:?}, not {:?}",
                    f.target, a.target
                )));
            }
            f.rules
        }
        (None, Some(r)) => vec![ChainRule { relations: r.clone(), score: 1.0 }],
        (None, None) => unreachable!("clap requires one of --rules, --rule"),
    };
    let Some(first) = rules.first() else {
        return Err(CliError::config("no rules to evaluate"));
    };
    let opts = ChainOptions {
        chain_length: first.relations.len(),
        ..ChainOptions::default()
    };
    let (graph, task) = load_task(&a.data, &a.target, opts)?;
    let split = match a.split {
        SplitArg::Valid => FinalSplit::Valid,
        SplitArg::Test => FinalSplit::Test,
    };
    let ev = KgEvaluator::new(graph, task.clone(), !a.unfiltered).with_final_split(split);
    let mut rows = Vec::new();
    for r in &rules {
        let m = ev.rule_metrics(&task.resolve(r)?, &[1, 3, 10])?;
        let hit = |k| m.hits_at(k).unwrap_or(f64::NAN);
        println!(
            "rule={} mrr={:.6} hits@1={:.6} hits@3={:.6} hits@10={:.6}",
            task.format_rule(r),
            m.mrr,
            hit(1),
            hit(3),
            hit(10)
        );
        rows.push(json!({ "rule": r, "metrics": m }));
    }
    if let Some(p) = &a.out {
        write_file(p, to_pretty(&rows))?;
    }
    Ok(())
}

fn rules(a: &RulesArgs) -> CliResult<()> {
    let mut kg = match &a.config {
        None => KgSection::default(),
        Some(p) => match read_structured(p)?.get("kg") {
            None => KgSection::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::config(format!("key `kg`: {e}")))?,
        },
    };
    if let Some(t) = &a.target {
        kg.target = Some(t.clone());
    }
    let target = kg.target.clone().unwrap_or_else(|| TARGET_NAME.to_string());
    let (_, task) = load_task(&a.data, &target, kg.chain_options())?;
    let d = Checkpoint::read(&a.checkpoint)?.into_distribution(Arc::new(task.supernet()))?;
    let top = extract_top_rules(&d, &task, a.k)?;
    print!("{}", rules_text(&task, &top));
    if let Some(p) = &a.out {
        write_file(p, to_pretty(&rules_file(&task, &top)))?;
    }
    Ok(())
}

pub fn run(c: KgCmd) -> CliResult<()> {
    match c {
        KgCmd::Synth(a) => synth(&a),
        KgCmd::Search(a) => cmd_search(&a, Some(TaskKind::Kg)),
        KgCmd::Eval(a) => eval(&a),
        KgCmd::Rules(a) => rules(&a),
    }
}
