//! Equal-budget comparison against uniform random search and the rank-1
//! (independent edges) encoding.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{search, Mode, SearchConfig, SearchError, TaskEvaluator};
use crate::supernet::{SubgraphIndex, Supernet};
use crate::tn::{InitSpec, RankMap, TnDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub search: SearchConfig,
    pub trace_rank: usize,
    pub init: InitSpec,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub algorithm: String,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

impl BaselineRow {
    fn from_scores(algorithm: &str, scores: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&scores);
        Self {
            algorithm: algorithm.to_string(),
            mean,
            std,
            scores,
        }
    }
}

/// Sample mean and (n-1) standard deviation.
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Draws `budget` uniform subgraphs, keeps the best validation reward (first
/// wins ties), and returns it with its final score.
pub fn random_search(
    supernet: &Supernet,
    eval: &dyn TaskEvaluator,
    budget: u64,
    seed: u64,
) -> Result<(SubgraphIndex, f64), SearchError> {
    if budget == 0 {
        return Err(SearchError::Budget("random search needs at least one evaluation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = supernet.choice_counts();
    let mut best: Option<(SubgraphIndex, f64)> = None;
    for it in 0..budget {
        let idx = SubgraphIndex::new(counts.iter().map(|&c| rng.random_range(0..c)).collect());
        let r = eval.evaluate(&idx).map_err(|source| SearchError::Eval {
            iteration: it as usize,
            source,
        })?;
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((idx, r));
        }
    }
    let (idx, _) = best.expect("budget is positive");
    let score = match eval.final_evaluate(&idx) {
        Some(r) => r,
        None => eval.evaluate(&idx),
    }
    .map_err(|source| SearchError::Eval {
        iteration: budget as usize,
        source,
    })?;
    Ok((idx, score))
}

/// Runs the tensor-network search at `trace_rank`, the rank-1 ablation and
/// uniform random search over the same seeds and evaluation budget.
pub fn compare_baselines(
    supernet: Arc<Supernet>,
    eval: &dyn TaskEvaluator,
    cfg: &BaselineConfig,
) -> Result<Vec<BaselineRow>, SearchError> {
    if cfg.search.mode != Mode::Stochastic {
        return Err(SearchError::Budget(
            "baseline comparison equalizes sampled evaluations; use stochastic mode".into(),
        ));
    }
    let budget = cfg.search.iterations as u64 * cfg.search.samples_per_step as u64;
    if budget == 0 {
        return Err(SearchError::Budget("zero evaluation budget".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(SearchError::Budget("no seeds".into()));
    }
    cfg.search.validate()?;

    let run_tn = |rank: usize, seed: u64| -> Result<f64, SearchError> {
        let ranks = RankMap::uniform(&supernet, rank)?;
        let mut d = TnDistribution::init(supernet.clone(), ranks, cfg.init, seed)?;
        let mut sc = cfg.search.clone();
        sc.seed = seed;
        Ok(search(&mut d, eval, &sc)?.best_score)
    };
    let collect = |f: &(dyn Fn(u64) -> Result<f64, SearchError> + Sync)| -> Result<Vec<f64>, SearchError> {
        if eval.concurrency_safe() {
            cfg.seeds.par_iter().map(|&s| f(s)).collect()
        } else {
            cfg.seeds.iter().map(|&s| f(s)).collect()
        }
    };

    let trace = collect(&|s| run_tn(cfg.trace_rank, s))?;
    let rank1 = collect(&|s| run_tn(1, s))?;
    let random = collect(&|s| random_search(&supernet, eval, budget, s).map(|r| r.1))?;
    Ok(vec![
        BaselineRow::from_scores(&format!("trace_r{}", cfg.trace_rank), trace),
        BaselineRow::from_scores("rank1", rank1),
        BaselineRow::from_scores("random", random),
    ])
}
