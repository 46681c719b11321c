use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{EntityId, KgDataset, RelationId, RelationalGraph, Triple};
use super::sparse::{Accumulator, SparseVec};
use super::RelationalError;
use crate::supernet::{SubgraphIndex, Supernet};
use crate::tn::{CoreGrads, TnDistribution};

/// Label used for the no-op relation.
pub const IDENTITY_LABEL: &str = "@identity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Candidate {
    Identity,
    Relation(RelationId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainOptions {
    pub chain_length: usize,
    pub include_identity: bool,
    pub exclude_target: bool,
    /// Clamp each pair's path count at 1 in the relaxed objective.
    pub clamp: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            chain_length: 2,
            include_identity: true,
            exclude_target: true,
            clamp: false,
        }
    }
}

/// A target relation, the chain length and the candidate relations per
/// position, plus the target's train/valid/test pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTask {
    pub target: RelationId,
    pub target_name: String,
    pub chain_length: usize,
    pub candidates: Vec<Candidate>,
    labels: Vec<String>,
    pub train: Vec<(EntityId, EntityId)>,
    pub valid: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
    pub clamp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRule {
    pub relations: Vec<String>,
    pub score: f64,
}

impl ChainTask {
    pub fn new(
        graph: &RelationalGraph,
        target: RelationId,
        train: Vec<(EntityId, EntityId)>,
        valid: Vec<(EntityId, EntityId)>,
        test: Vec<(EntityId, EntityId)>,
        opts: ChainOptions,
    ) -> Result<Self, RelationalError> {
        if opts.chain_length == 0 {
            return Err(RelationalError::Task("chain_length must be >= 1".into()));
        }
        let target_name = graph
            .relations()
            .get(target as usize)
            .ok_or_else(|| RelationalError::Task(format!("unknown target relation id {target}")))?
            .clone();
        let mut candidates = Vec::new();
        if opts.include_identity {
            candidates.push(Candidate::Identity);
        }
        for r in 0..graph.num_relations() as RelationId {
            if !(opts.exclude_target && r == target) {
                candidates.push(Candidate::Relation(r));
            }
        }
        if candidates.is_empty() {
            return Err(RelationalError::Task("no candidate relations".into()));
        }
        let labels = candidates
            .iter()
            .map(|c| match c {
                Candidate::Identity => IDENTITY_LABEL.to_string(),
                Candidate::Relation(r) => graph.relations()[*r as usize].clone(),
            })
            .collect();
        Ok(Self {
            target,
            target_name,
            chain_length: opts.chain_length,
            candidates,
            labels,
            train,
            valid,
            test,
            clamp: opts.clamp,
        })
    }

    /// Builds the task for `target` from a dataset's split files.
    pub fn from_dataset(ds: &KgDataset, target: &str, opts: ChainOptions) -> Result<Self, RelationalError> {
        let r = ds
            .graph
            .relation_id(target)
            .ok_or_else(|| RelationalError::Task(format!("unknown target relation {target:?}")))?;
        let pick = |s: &[Triple]| s.iter().filter(|t| t.1 == r).map(|t| (t.0, t.2)).collect::<Vec<_>>();
        Self::new(&ds.graph, r, pick(&ds.train), pick(&ds.valid), pick(&ds.test), opts)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// A chain supernet with one edge per rule position.
    pub fn supernet(&self) -> Supernet {
        Supernet::chain(
            &format!("chain-{}", self.target_name),
            &vec![self.labels.clone(); self.chain_length],
        )
        .expect("labels are unique and non-empty")
    }

    pub fn rule_candidates(&self, idx: &SubgraphIndex) -> Vec<Candidate> {
        idx.picks().iter().map(|&i| self.candidates[i]).collect()
    }

    pub fn rule(&self, idx: &SubgraphIndex, score: f64) -> ChainRule {
        ChainRule {
            relations: idx.picks().iter().map(|&i| self.labels[i].clone()).collect(),
            score,
        }
    }

    /// Parses a rule's labels back into candidates.
    pub fn resolve(&self, rule: &ChainRule) -> Result<Vec<Candidate>, RelationalError> {
        if rule.relations.len() != self.chain_length {
            return Err(RelationalError::Task(format!(
                "rule has {} relations, task expects {}",
                rule.relations.len(),
                self.chain_length
            )));
        }
        rule.relations
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|x| x == l)
                    .map(|k| self.candidates[k])
                    .ok_or_else(|| RelationalError::Task(format!("{l:?} is not a candidate")))
            })
            .collect()
    }

    /// `target(C,A) <= r1(C,B1), r2(B1,A) [prob=p]`; identity steps are dropped.
    pub fn format_rule(&self, rule: &ChainRule) -> String {
        let body: Vec<&str> = rule
            .relations
            .iter()
            .map(String::as_str)
            .filter(|l| *l != IDENTITY_LABEL)
            .collect();
        let n = body.len();
        let var = |k: usize| -> String {
            if k == 0 {
                "C".into()
            } else if k == n {
                "A".into()
            } else {
                format!("B{k}")
            }
        };
        let atoms = if n == 0 {
            "equal(C,A)".to_string()
        } else {
            body.iter()
                .enumerate()
                .map(|(k, r)| format!("{r}({},{})", var(k), var(k + 1)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!("{}(C,A) <= {atoms} [prob={}]", self.target_name, fmt_prob(rule.score))
    }
}

fn fmt_prob(p: f64) -> String {
    format!("{p:.6}")
}

impl fmt::Display for ChainRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [prob={}]", self.relations.join(" . "), fmt_prob(self.score))
    }
}

/// Follows chains from one head at a time, reusing a scatter buffer.
pub struct ChainScorer<'g> {
    graph: &'g RelationalGraph,
    acc: Accumulator,
}

impl<'g> ChainScorer<'g> {
    pub fn new(graph: &'g RelationalGraph) -> Self {
        Self {
            graph,
            acc: Accumulator::new(graph.num_entities()),
        }
    }

    /// Largest frontier materialized so far.
    pub fn peak_frontier(&self) -> usize {
        self.acc.peak
    }

    pub fn step(&mut self, v: &SparseVec, c: Candidate) -> SparseVec {
        match c {
            Candidate::Identity => v.clone(),
            Candidate::Relation(r) => {
                self.acc.add_vec_mat(v, self.graph.adjacency(r), 1.0);
                self.acc.take()
            }
        }
    }

    /// Row `x` of the product of the rule's adjacency matrices: path counts.
    pub fn path_counts(&mut self, x: EntityId, rule: &[Candidate]) -> SparseVec {
        let mut v = SparseVec::unit(x, 1.0);
        for &c in rule {
            if v.is_empty() {
                break;
            }
            v = self.step(&v, c);
        }
        v
    }
}

fn group_by_head(pairs: &[(EntityId, EntityId)]) -> BTreeMap<EntityId, Vec<EntityId>> {
    let mut m: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for &(x, y) in pairs {
        m.entry(x).or_default().push(y);
    }
    m
}

/// Number of `(x, y)` pairs that the rule connects by at least one path.
pub fn hard_measure(graph: &RelationalGraph, rule: &[Candidate], pairs: &[(EntityId, EntityId)]) -> f64 {
    let mut sc = ChainScorer::new(graph);
    let mut n = 0usize;
    for (x, ys) in group_by_head(pairs) {
        let v = sc.path_counts(x, rule);
        n += ys.iter().filter(|&&y| v.get(y) >= 1.0).count();
    }
    n as f64
}

/// Sum of real-valued path counts over `pairs`.
pub fn path_count_sum(graph: &RelationalGraph, rule: &[Candidate], pairs: &[(EntityId, EntityId)]) -> f64 {
    let mut sc = ChainScorer::new(graph);
    group_by_head(pairs)
        .into_iter()
        .map(|(x, ys)| {
            let v = sc.path_counts(x, rule);
            ys.iter().map(|&y| v.get(y)).sum::<f64>()
        })
        .sum()
}

/// Per-edge rank sizes and normalized cores of a chain distribution.
struct ChainView<'d> {
    ranks: Vec<usize>,
    cores: &'d [crate::tn::EdgeCore],
}

fn chain_view<'d>(task: &ChainTask, d: &'d TnDistribution) -> Result<ChainView<'d>, RelationalError> {
    let s = d.supernet();
    let t_len = task.chain_length;
    let is_chain = s.num_edges() == t_len
        && s.num_nodes() == t_len + 1
        && s.edges().iter().enumerate().all(|(t, e)| e.u == t && e.v == t + 1);
    if !is_chain {
        return Err(RelationalError::NotChain);
    }
    if s.choice_counts().iter().any(|&c| c != task.candidates.len()) {
        return Err(RelationalError::Task(
            "supernet choices do not match the task's candidates".into(),
        ));
    }
    Ok(ChainView {
        ranks: d.ranks().as_slice().to_vec(),
        cores: d.normalized_cores(),
    })
}

/// Forward messages for one head: `msgs[t][r][i] = alpha_t[r] * A_i`.
struct Forward {
    msgs: Vec<Vec<Vec<SparseVec>>>,
    alpha_last: Vec<SparseVec>,
}

fn forward(
    view: &ChainView<'_>,
    task: &ChainTask,
    sc: &mut ChainScorer<'_>,
    x: EntityId,
) -> Forward {
    let c_len = task.candidates.len();
    let r0 = view.ranks[0];
    let mut alpha: Vec<SparseVec> = vec![SparseVec::unit(x, 1.0 / r0 as f64); r0];
    let mut msgs = Vec::with_capacity(task.chain_length);
    for (t, a) in view.cores.iter().enumerate() {
        let (rl, _, rr) = a.shape();
        let w = 1.0 / view.ranks[t + 1] as f64;
        let m: Vec<Vec<SparseVec>> = alpha
            .iter()
            .map(|al| task.candidates.iter().map(|&c| sc.step(al, c)).collect())
            .collect();
        let mut next = Vec::with_capacity(rr);
        for r2 in 0..rr {
            for r in 0..rl {
                for i in 0..c_len {
                    let p = a.get(r, i, r2);
                    if p != 0.0 {
                        sc.acc.add_vec(&m[r][i], p * w);
                    }
                }
            }
            next.push(sc.acc.take());
        }
        msgs.push(m);
        alpha = next;
    }
    Forward { msgs, alpha_last: alpha }
}

fn sum_vecs(sc: &mut ChainScorer<'_>, vs: &[SparseVec]) -> SparseVec {
    for v in vs {
        sc.acc.add_vec(v, 1.0);
    }
    sc.acc.take()
}

/// Row `x` of the expected chain product `M = sum_idx P(idx) prod_t A_{idx_t}`.
pub fn relaxed_row(
    graph: &RelationalGraph,
    task: &ChainTask,
    d: &TnDistribution,
    x: EntityId,
) -> Result<SparseVec, RelationalError> {
    let view = chain_view(task, d)?;
    let mut sc = ChainScorer::new(graph);
    let f = forward(&view, task, &mut sc, x);
    Ok(sum_vecs(&mut sc, &f.alpha_last))
}

/// `sum_{(x,y) in train} f(v_x^T M v_y)` with `f` the identity (or a clamp
/// at 1), and its exact gradient with respect to the raw cores.
pub fn relaxed_objective(
    graph: &RelationalGraph,
    task: &ChainTask,
    d: &TnDistribution,
) -> Result<(f64, CoreGrads), RelationalError> {
    let view = chain_view(task, d)?;
    let heads: Vec<(EntityId, Vec<EntityId>)> = group_by_head(&task.train).into_iter().collect();
    let zero: Vec<Vec<f64>> = view.cores.iter().map(|c| vec![0.0; c.values().len()]).collect();

    let per_head: Vec<(f64, Vec<Vec<f64>>)> = heads
        .par_iter()
        .map_init(
            || ChainScorer::new(graph),
            |sc, (x, ys)| head_contribution(&view, task, sc, *x, ys, &zero),
        )
        .collect();

    let mut value = 0.0;
    let mut g = zero;
    for (v, gh) in per_head {
        value += v;
        for (a, b) in g.iter_mut().zip(gh) {
            for (p, q) in a.iter_mut().zip(b) {
                *p += q;
            }
        }
    }
    Ok((value, d.pullback(g)?))
}

fn head_contribution(
    view: &ChainView<'_>,
    task: &ChainTask,
    sc: &mut ChainScorer<'_>,
    x: EntityId,
    ys: &[EntityId],
    zero: &[Vec<f64>],
) -> (f64, Vec<Vec<f64>>) {
    let f = forward(view, task, sc, x);
    let s = sum_vecs(sc, &f.alpha_last);
    let mut value = 0.0;
    for &y in ys {
        let v = s.get(y);
        value += if task.clamp { v.min(1.0) } else { v };
        let slope = if task.clamp && v >= 1.0 { 0.0 } else { 1.0 };
        if slope != 0.0 {
            sc.acc.add(y, slope);
        }
    }
    let seed = sc.acc.take();
    let mut grads = zero.to_vec();
    if seed.is_empty() {
        return (value, grads);
    }
    let t_len = task.chain_length;
    let mut gamma: Vec<SparseVec> = vec![seed; *view.ranks.last().expect("chain has nodes")];
    for t in (0..t_len).rev() {
        let a = &view.cores[t];
        let (rl, c_len, rr) = a.shape();
        let w = 1.0 / view.ranks[t + 1] as f64;
        let m = &f.msgs[t];
        let g = &mut grads[t];
        for r in 0..rl {
            for i in 0..c_len {
                for r2 in 0..rr {
                    g[a.offset(r, i, r2)] += w * m[r][i].dot(&gamma[r2]);
                }
            }
        }
        if t == 0 {
            break;
        }
        // gamma_t[r] = w * sum_{i,r2} A(r,i,r2) * A_i gamma_{t+1}[r2]
        let pulled: Vec<Vec<SparseVec>> = gamma
            .iter()
            .map(|gv| {
                task.candidates
                    .iter()
                    .map(|&c| match c {
                        Candidate::Identity => gv.clone(),
                        Candidate::Relation(rel) => {
                            sc.acc.add_vec_mat(gv, sc.graph.reverse_adjacency(rel), 1.0);
                            sc.acc.take()
                        }
                    })
                    .collect()
            })
            .collect();
        let mut next = Vec::with_capacity(rl);
        for r in 0..rl {
            for r2 in 0..rr {
                for (i, pv) in pulled[r2].iter().enumerate() {
                    let p = a.get(r, i, r2);
                    if p != 0.0 {
                        sc.acc.add_vec(pv, p * w);
                    }
                }
            }
            next.push(sc.acc.take());
        }
        gamma = next;
    }
    (value, grads)
}
