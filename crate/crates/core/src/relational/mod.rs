//! Chains of relations on knowledge graphs and heterogeneous networks.
//!
//! A rule `target(x, y) <= B1(x, z1), ..., BT(z_{T-1}, y)` is a path through
//! the product of relation adjacency matrices `A_B1 ... A_BT`. A chain
//! supernet with one edge per position and one choice per candidate relation
//! turns rule search into subgraph search. Products are always evaluated
//! sparsely from a head entity's row; no `n_e x n_e` intermediate is formed.
//!
//! Meta-paths on heterogeneous networks use the same machinery: load the
//! typed edges as relations and pick a node-pair affinity relation as the
//! target.

mod chain;
mod graph;
mod metrics;
mod sparse;
mod synth;

#[cfg(test)]
mod tests;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use chain::{
    hard_measure, path_count_sum, relaxed_objective, relaxed_row, Candidate, ChainOptions, ChainRule,
    ChainScorer, ChainTask, IDENTITY_LABEL,
};
pub use graph::{load_triples, parse_triples, Csr, EntityId, GraphBuilder, KgDataset, RelationId, RelationalGraph, Triple};
pub use metrics::{rank_metrics, rank_of, tail_filter, RankMetrics, RowScorer, TailFilter};
pub use sparse::SparseVec;
pub use synth::{generate_planted_kg, PlantedKg, PlantedKgSpec, TARGET_NAME};

use crate::search::{EvalError, TaskEvaluator};
use crate::supernet::SubgraphIndex;
use crate::tn::{CoreGrads, TnDistribution, TnError};

#[derive(Debug, thiserror::Error)]
pub enum RelationalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}line {line}: {msg}")]
    MalformedIn { file: String, line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("{0}: no triples")]
    Empty(String),
    #[error("relaxed chain objective needs a chain supernet matching the task")]
    NotChain,
    #[error("empty query set")]
    EmptyQueries,
    #[error("planted rule yields no target triples")]
    EmptyTarget,
    #[error("task: {0}")]
    Task(String),
    #[error(transparent)]
    Tn(#[from] TnError),
}

impl RelationalError {
    fn in_file(self, path: &Path) -> Self {
        match self {
            RelationalError::Malformed { line, msg } => RelationalError::MalformedIn {
                file: format!("{}: ", path.display()),
                line,
                msg,
            },
            e => e,
        }
    }
}

/// The `k` most probable chains under `d`, descending, lexicographic tie-break.
/// Asking for more than the space holds returns the whole space.
pub fn extract_top_rules(d: &TnDistribution, task: &ChainTask, k: usize) -> Result<Vec<ChainRule>, RelationalError> {
    let (ranked, _) = d.top_k(k)?;
    Ok(ranked.iter().map(|r| task.rule(&r.index, r.probability)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesFile {
    pub target: String,
    pub chain_length: usize,
    pub rules: Vec<ChainRule>,
}

/// Text lines, one per rule.
pub fn rules_text(task: &ChainTask, rules: &[ChainRule]) -> String {
    let mut s = String::new();
    for r in rules {
        s.push_str(&task.format_rule(r));
        s.push('\n');
    }
    s
}

pub fn rules_file(task: &ChainTask, rules: &[ChainRule]) -> RulesFile {
    RulesFile {
        target: task.target_name.clone(),
        chain_length: task.chain_length,
        rules: rules.to_vec(),
    }
}

/// Which split `final_evaluate` ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalSplit {
    Valid,
    #[default]
    Test,
}

/// Reward = fraction of train pairs the rule connects; relaxed objective =
/// expected path counts over train pairs, divided by their number; final
/// score = MRR of the rule on the held-out split.
pub struct KgEvaluator {
    graph: Arc<RelationalGraph>,
    task: Arc<ChainTask>,
    filter: Option<TailFilter>,
    final_split: FinalSplit,
}

impl KgEvaluator {
    /// `filtered` removes every other known true tail of the target from the ranking.
    pub fn new(graph: Arc<RelationalGraph>, task: Arc<ChainTask>, filtered: bool) -> Self {
        let filter = filtered.then(|| tail_filter(task.train.iter().chain(&task.valid).chain(&task.test)));
        Self {
            graph,
            task,
            filter,
            final_split: FinalSplit::Test,
        }
    }

    pub fn with_final_split(mut self, s: FinalSplit) -> Self {
        self.final_split = s;
        self
    }

    pub fn graph(&self) -> &Arc<RelationalGraph> {
        &self.graph
    }

    pub fn task(&self) -> &Arc<ChainTask> {
        &self.task
    }

    pub fn filter(&self) -> Option<&TailFilter> {
        self.filter.as_ref()
    }

    fn queries(&self) -> &[(EntityId, EntityId)] {
        match self.final_split {
            FinalSplit::Valid => &self.task.valid,
            FinalSplit::Test => &self.task.test,
        }
    }

    /// Metrics of one rule on the configured held-out split.
    pub fn rule_metrics(&self, rule: &[Candidate], k_list: &[usize]) -> Result<RankMetrics, RelationalError> {
        rank_metrics(
            &self.graph,
            &self.task,
            RowScorer::Rule(rule),
            self.queries(),
            k_list,
            self.filter.as_ref(),
        )
    }

    /// Metrics of the expected chain product under `d`.
    pub fn relaxed_metrics(&self, d: &TnDistribution, k_list: &[usize]) -> Result<RankMetrics, RelationalError> {
        rank_metrics(
            &self.graph,
            &self.task,
            RowScorer::Relaxed(d),
            self.queries(),
            k_list,
            self.filter.as_ref(),
        )
    }

    fn train_len(&self) -> Result<f64, EvalError> {
        match self.task.train.len() {
            0 => Err(EvalError("target has no train pairs".into())),
            n => Ok(n as f64),
        }
    }
}

impl TaskEvaluator for KgEvaluator {
    fn evaluate(&self, idx: &SubgraphIndex) -> Result<f64, EvalError> {
        if idx.len() != self.task.chain_length || idx.picks().iter().any(|&i| i >= self.task.candidates.len()) {
            return Err(EvalError(format!("unknown index {idx}")));
        }
        let rule = self.task.rule_candidates(idx);
        Ok(hard_measure(&self.graph, &rule, &self.task.train) / self.train_len()?)
    }

    fn has_relaxed_objective(&self) -> bool {
        true
    }

    fn relaxed_objective(&self, d: &TnDistribution) -> Option<Result<(f64, CoreGrads), EvalError>> {
        Some((|| {
            let n = self.train_len()?;
            let (v, mut g) = relaxed_objective(&self.graph, &self.task, d).map_err(|e| EvalError(e.to_string()))?;
            g.scale(1.0 / n);
            Ok((v / n, g))
        })())
    }

    fn final_evaluate(&self, idx: &SubgraphIndex) -> Option<Result<f64, EvalError>> {
        let rule = self.task.rule_candidates(idx);
        Some(
            self.rule_metrics(&rule, &[1])
                .map(|m| m.mrr)
                .map_err(|e| EvalError(e.to_string())),
        )
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}
