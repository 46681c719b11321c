use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::chain::{relaxed_row, Candidate, ChainScorer, ChainTask};
use super::graph::{EntityId, RelationalGraph};
use super::sparse::SparseVec;
use super::RelationalError;
use crate::tn::TnDistribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    /// `(k, Hits@k)` in the order requested.
    pub hits: Vec<(usize, f64)>,
    pub queries: usize,
}

impl RankMetrics {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, h)| *h)
    }
}

/// What scores the candidate tails of a query head.
pub enum RowScorer<'a> {
    Rule(&'a [Candidate]),
    Relaxed(&'a TnDistribution),
}

/// Known true tails per head, removed from the candidate list in the filtered setting.
pub type TailFilter = HashMap<EntityId, HashSet<EntityId>>;

pub fn tail_filter<'a, I: IntoIterator<Item = &'a (EntityId, EntityId)>>(pairs: I) -> TailFilter {
    let mut m = TailFilter::new();
    for &(x, y) in pairs {
        m.entry(x).or_default().insert(y);
    }
    m
}

/// 1-based pessimistic rank of `y_true` given the head's sparse score row.
/// Scores are non-negative and entities absent from `row` score 0.
pub fn rank_of(
    row: &SparseVec,
    y_true: EntityId,
    n_entities: usize,
    filtered: Option<&HashSet<EntityId>>,
) -> usize {
    let s_true = row.get(y_true);
    let skip = |e: EntityId| e == y_true || filtered.is_some_and(|f| f.contains(&e));
    let mut rank = 1;
    for (e, s) in row.iter() {
        if !skip(e) && s >= s_true {
            rank += 1;
        }
    }
    if s_true == 0.0 {
        // every other unfiltered zero-scored entity ties with the true tail
        let filtered_zeros = filtered.map_or(0, |f| {
            f.iter().filter(|&&e| e != y_true && row.get(e) == 0.0).count()
        });
        rank += n_entities - row.nnz() - 1 - filtered_zeros;
    }
    rank
}

/// MRR and Hits@k over `queries` (pairs of head and true tail).
pub fn rank_metrics(
    graph: &RelationalGraph,
    task: &ChainTask,
    scorer: RowScorer<'_>,
    queries: &[(EntityId, EntityId)],
    k_list: &[usize],
    filter: Option<&TailFilter>,
) -> Result<RankMetrics, RelationalError> {
    if queries.is_empty() {
        return Err(RelationalError::EmptyQueries);
    }
    let n = graph.num_entities();
    let mut sc = ChainScorer::new(graph);
    let mut rows: HashMap<EntityId, SparseVec> = HashMap::new();
    let mut rr = 0.0;
    let mut hits = vec![0usize; k_list.len()];
    for &(x, y) in queries {
        if !rows.contains_key(&x) {
            let row = match &scorer {
                RowScorer::Rule(rule) => sc.path_counts(x, rule),
                RowScorer::Relaxed(d) => relaxed_row(graph, task, d, x)?,
            };
            rows.insert(x, row);
        }
        let rank = rank_of(&rows[&x], y, n, filter.and_then(|f| f.get(&x)));
        rr += 1.0 / rank as f64;
        for (h, &k) in hits.iter_mut().zip(k_list) {
            if rank <= k {
                *h += 1;
            }
        }
    }
    let q = queries.len() as f64;
    Ok(RankMetrics {
        mrr: rr / q,
        hits: k_list.iter().zip(hits).map(|(&k, h)| (k, h as f64 / q)).collect(),
        queries: queries.len(),
    })
}
