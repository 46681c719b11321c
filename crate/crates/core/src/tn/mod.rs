//! Tensor-network distributions over the subgraphs of a supernet.
//!
//! Each edge `t` owns a parameter core `beta[t]` of shape
//! `R_{N1(t)} x C_t x R_{N2(t)}`. Normalizing every `(r, r')` slice with a
//! softmax along the choice axis and summing over one rank index per node
//! gives
//!
//! ```text
//! P(i_1..i_T) = 1/prod_n R_n * sum_{r_n} prod_t softmax(beta[t])[r_{N1(t)}, i_t, r_{N2(t)}]
//! ```
//!
//! which is non-negative and sums to one for any finite `beta`: summing a
//! single core over its choice axis yields the all-ones matrix, so every
//! rank assignment contributes exactly `1/prod_n R_n`.
//!
//! Equivalently the rank indices are latent variables with uniform priors,
//! and the distribution is exact inference in that graphical model. Marginals,
//! sampling and gradients all reduce to weighted contractions (see
//! [`contract`]); [`TnDistribution::materialize`] is the brute-force
//! reference that enumerates every rank assignment.

mod checkpoint;
mod contract;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::supernet::{Supernet, SupernetError, SubgraphIndex, DEFAULT_ENUMERATION_CAP};
use contract::{contract, Factor};

pub use checkpoint::{Checkpoint, CheckpointFormat};

#[derive(Debug, thiserror::Error)]
pub enum TnError {
    #[error(transparent)]
    Supernet(#[from] SupernetError),
    #[error("rank map: {0}")]
    Rank(String),
    #[error("edge {edge}: core shape {got:?} does not match expected {expected:?}")]
    Shape {
        edge: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("edge {edge}: non-finite core entry")]
    NonFinite { edge: usize },
    #[error("contraction intermediate of {size} entries exceeds cap {cap}")]
    ContractionTooLarge { size: usize, cap: usize },
    #[error("{what} of {size} exceeds cap {cap}")]
    CapExceeded { what: &'static str, size: u128, cap: u64 },
    #[error("conditioning prefix for edge {edge} has {got} entries")]
    Prefix { edge: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Rank `R_n` for every supernet node, aligned with the supernet node order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankMap {
    ranks: Vec<usize>,
}

impl RankMap {
    pub fn uniform(supernet: &Supernet, rank: usize) -> Result<Self, TnError> {
        Self::new(supernet, vec![rank; supernet.num_nodes()])
    }

    pub fn new(supernet: &Supernet, ranks: Vec<usize>) -> Result<Self, TnError> {
        if ranks.len() != supernet.num_nodes() {
            return Err(TnError::Rank(format!(
                "{} ranks for {} nodes",
                ranks.len(),
                supernet.num_nodes()
            )));
        }
        if let Some(n) = ranks.iter().position(|&r| r == 0) {
            return Err(TnError::Rank(format!(
                "node {:?} has rank 0",
                supernet.nodes()[n]
            )));
        }
        Ok(Self { ranks })
    }

    /// Builds from `(node id, rank)` pairs; every node must be listed.
    pub fn from_named<'a>(
        supernet: &Supernet,
        named: impl IntoIterator<Item = (&'a str, usize)>,
    ) -> Result<Self, TnError> {
        let mut ranks = vec![0; supernet.num_nodes()];
        for (id, r) in named {
            let n = supernet
                .node_position(id)
                .ok_or_else(|| TnError::Rank(format!("unknown node {id:?}")))?;
            ranks[n] = r;
        }
        if let Some(n) = ranks.iter().position(|&r| r == 0) {
            return Err(TnError::Rank(format!(
                "node {:?} missing or rank 0",
                supernet.nodes()[n]
            )));
        }
        Ok(Self { ranks })
    }

    pub fn rank(&self, node: usize) -> usize {
        self.ranks[node]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.ranks
    }

    /// `prod_n R_n`, saturating.
    pub fn assignment_count(&self) -> u128 {
        self.ranks
            .iter()
            .fold(1u128, |acc, &r| acc.saturating_mul(r as u128))
    }
}

/// Raw parameter block `beta[t]`, row-major over `(r, i, r')`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCore {
    left_rank: usize,
    choices: usize,
    right_rank: usize,
    values: Vec<f64>,
}

impl EdgeCore {
    pub fn zeros(left_rank: usize, choices: usize, right_rank: usize) -> Self {
        Self {
            left_rank,
            choices,
            right_rank,
            values: vec![0.0; left_rank * choices * right_rank],
        }
    }

    pub fn from_values(
        left_rank: usize,
        choices: usize,
        right_rank: usize,
        values: Vec<f64>,
    ) -> Option<Self> {
        (values.len() == left_rank * choices * right_rank).then_some(Self {
            left_rank,
            choices,
            right_rank,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left_rank, self.choices, self.right_rank)
    }

    #[inline]
    pub fn offset(&self, r: usize, i: usize, rr: usize) -> usize {
        (r * self.choices + i) * self.right_rank + rr
    }

    pub fn get(&self, r: usize, i: usize, rr: usize) -> f64 {
        self.values[self.offset(r, i, rr)]
    }

    pub fn set(&mut self, r: usize, i: usize, rr: usize, v: f64) {
        let o = self.offset(r, i, rr);
        self.values[o] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax of every `(r, r')` slice of `core` along the choice axis.
pub fn normalized_core(core: &EdgeCore) -> EdgeCore {
    let (rl, c, rr) = core.shape();
    let mut out = EdgeCore::zeros(rl, c, rr);
    let mut slice = vec![0.0; c];
    for a in 0..rl {
        for b in 0..rr {
            for (i, s) in slice.iter_mut().enumerate() {
                *s = core.get(a, i, b);
            }
            for (i, p) in softmax(&slice).into_iter().enumerate() {
                out.set(a, i, b, p);
            }
        }
    }
    out
}

/// Backpropagates a gradient with respect to the normalized core into a
/// gradient with respect to the raw `beta` values.
pub(crate) fn softmax_backward(normalized: &EdgeCore, grad_normalized: &[f64]) -> Vec<f64> {
    let (rl, c, rr) = normalized.shape();
    let mut out = vec![0.0; grad_normalized.len()];
    for a in 0..rl {
        for b in 0..rr {
            let dot: f64 = (0..c)
                .map(|i| {
                    let o = normalized.offset(a, i, b);
                    normalized.values[o] * grad_normalized[o]
                })
                .sum();
            for i in 0..c {
                let o = normalized.offset(a, i, b);
                out[o] = normalized.values[o] * (grad_normalized[o] - dot);
            }
        }
    }
    out
}

/// Per-core gradient arrays, laid out like the cores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreGrads(pub Vec<Vec<f64>>);

impl CoreGrads {
    pub fn zeros_like(cores: &[EdgeCore]) -> Self {
        Self(cores.iter().map(|c| vec![0.0; c.values.len()]).collect())
    }

    pub fn add_scaled(&mut self, other: &CoreGrads, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn num_entries(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitSpec {
    Zeros,
    Gaussian { sd: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Gaussian { sd: 1e-3 }
    }
}

/// Work limits for exact evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    /// Largest subgraph space we enumerate.
    pub enumeration: u64,
    /// Largest number of rank assignments we enumerate.
    pub rank_assignments: u64,
    /// Largest intermediate table in a contraction.
    pub contraction: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            enumeration: DEFAULT_ENUMERATION_CAP,
            rank_assignments: 1_000_000,
            contraction: 1 << 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgmaxResult {
    pub index: SubgraphIndex,
    pub probability: f64,
    /// False when the space was too large and greedy conditional decoding was used.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedIndex {
    pub index: SubgraphIndex,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct TnDistribution {
    supernet: Arc<Supernet>,
    ranks: RankMap,
    cores: Vec<EdgeCore>,
    normalized: Vec<EdgeCore>,
    node_weights: Vec<Vec<f64>>,
    caps: Caps,
}

impl TnDistribution {
    pub fn init(
        supernet: Arc<Supernet>,
        ranks: RankMap,
        init: InitSpec,
        seed: u64,
    ) -> Result<Self, TnError> {
        if ranks.as_slice().len() != supernet.num_nodes() {
            return Err(TnError::Rank("rank map built for another supernet".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = match init {
            InitSpec::Zeros => None,
            InitSpec::Gaussian { sd } => Some(
                Normal::new(0.0, sd).map_err(|e| TnError::Rank(format!("bad init sd: {e}")))?,
            ),
        };
        let cores = supernet
            .edges()
            .iter()
            .map(|e| {
                let mut core =
                    EdgeCore::zeros(ranks.rank(e.u), e.num_choices(), ranks.rank(e.v));
                if let Some(n) = &normal {
                    core.values.iter_mut().for_each(|x| *x = n.sample(&mut rng));
                }
                core
            })
            .collect();
        Self::from_cores(supernet, ranks, cores)
    }

    pub fn from_cores(
        supernet: Arc<Supernet>,
        ranks: RankMap,
        cores: Vec<EdgeCore>,
    ) -> Result<Self, TnError> {
        if ranks.as_slice().len() != supernet.num_nodes() {
            return Err(TnError::Rank("rank map built for another supernet".into()));
        }
        if cores.len() != supernet.num_edges() {
            return Err(TnError::Rank(format!(
                "{} cores for {} edges",
                cores.len(),
                supernet.num_edges()
            )));
        }
        for (t, (core, e)) in cores.iter().zip(supernet.edges()).enumerate() {
            let expected = (ranks.rank(e.u), e.num_choices(), ranks.rank(e.v));
            if core.shape() != expected {
                return Err(TnError::Shape {
                    edge: t + 1,
                    expected,
                    got: core.shape(),
                });
            }
        }
        let node_weights = ranks
            .as_slice()
            .iter()
            .map(|&r| vec![1.0 / r as f64; r])
            .collect();
        let mut d = Self {
            supernet,
            ranks,
            normalized: Vec::new(),
            cores,
            node_weights,
            caps: Caps::default(),
        };
        d.refresh()?;
        Ok(d)
    }

    fn refresh(&mut self) -> Result<(), TnError> {
        for (t, c) in self.cores.iter().enumerate() {
            if c.values.iter().any(|x| !x.is_finite()) {
                return Err(TnError::NonFinite { edge: t + 1 });
            }
        }
        self.normalized = self.cores.iter().map(normalized_core).collect();
        Ok(())
    }

    /// Mutates the raw cores in place and renormalizes. Shapes must be preserved.
    pub fn update_cores<F: FnOnce(&mut [EdgeCore])>(&mut self, f: F) -> Result<(), TnError> {
        let shapes: Vec<_> = self.cores.iter().map(EdgeCore::shape).collect();
        f(&mut self.cores);
        for (t, (c, s)) in self.cores.iter().zip(shapes).enumerate() {
            if c.shape() != s || c.values.len() != s.0 * s.1 * s.2 {
                return Err(TnError::Shape {
                    edge: t + 1,
                    expected: s,
                    got: c.shape(),
                });
            }
        }
        self.refresh()
    }

    pub fn with_caps(mut self, caps: Caps) -> Self {
        self.caps = caps;
        self
    }

    pub fn set_caps(&mut self, caps: Caps) {
        self.caps = caps;
    }

    pub fn caps(&self) -> Caps {
        self.caps
    }

    pub fn supernet(&self) -> &Arc<Supernet> {
        &self.supernet
    }

    pub fn ranks(&self) -> &RankMap {
        &self.ranks
    }

    pub fn cores(&self) -> &[EdgeCore] {
        &self.cores
    }

    pub fn normalized_cores(&self) -> &[EdgeCore] {
        &self.normalized
    }

    pub fn num_parameters(&self) -> usize {
        self.cores.iter().map(|c| c.values.len()).sum()
    }

    /// The `A_t[., choice, .]` matrix as a factor over the edge's endpoint ranks.
    fn edge_factor(&self, t: usize, choice: usize) -> Factor {
        let e = &self.supernet.edges()[t];
        let a = &self.normalized[t];
        let (rl, _, rr) = a.shape();
        let entry = |x: usize, y: usize| a.get(x, choice, y);
        if e.is_self_loop() {
            Factor::single(e.u, (0..rl).map(|x| entry(x, x)).collect())
        } else {
            let mut m = Vec::with_capacity(rl * rr);
            for x in 0..rl {
                for y in 0..rr {
                    m.push(entry(x, y));
                }
            }
            Factor::pair(e.u, rl, e.v, rr, m)
        }
    }

    fn total(&self, factors: Vec<Factor>) -> Result<f64, TnError> {
        Ok(contract(factors, &self.node_weights, &[], self.caps.contraction)?.data[0])
    }

    /// `d Z / d A_t[a, b]` for the contraction `Z` of `others` with edge `t`'s matrix,
    /// returned as an `R_u x R_v` matrix (diagonal only for self-loops).
    fn environment(&self, t: usize, others: Vec<Factor>) -> Result<Vec<f64>, TnError> {
        let e = &self.supernet.edges()[t];
        let (rl, _, rr) = self.normalized[t].shape();
        let env = contract(
            others,
            &self.node_weights,
            &[e.u, e.v],
            self.caps.contraction,
        )?;
        let mut out = vec![0.0; rl * rr];
        for x in 0..rl {
            for y in 0..rr {
                if e.is_self_loop() && x != y {
                    continue;
                }
                out[x * rr + y] = env.get(|v| if v == e.u { x } else { y });
            }
        }
        Ok(out)
    }

    /// Probability of one subgraph.
    pub fn prob(&self, idx: &SubgraphIndex) -> Result<f64, TnError> {
        self.supernet.validate_index(idx)?;
        let factors = idx
            .picks()
            .iter()
            .enumerate()
            .map(|(t, &c)| self.edge_factor(t, c))
            .collect();
        self.total(factors)
    }

    /// Full probability tensor, row-major over `C_1 x ... x C_T`, by
    /// enumerating every rank assignment. This is the brute-force reference.
    pub fn materialize(&self) -> Result<Vec<f64>, TnError> {
        let space = self.supernet.enumerable_size(self.caps.enumeration)? as usize;
        let n_assign = self.ranks.assignment_count();
        if n_assign > self.caps.rank_assignments as u128 {
            return Err(TnError::CapExceeded {
                what: "rank assignment count",
                size: n_assign,
                cap: self.caps.rank_assignments,
            });
        }
        let counts = self.supernet.choice_counts();
        let edges = self.supernet.edges();
        let t_len = edges.len();
        let weight = 1.0 / n_assign as f64;
        let mut out = vec![0.0; space];
        let mut buf = vec![0.0; space];
        let mut assign = vec![0usize; self.supernet.num_nodes()];
        loop {
            // outer product of the selected fibres, built edge by edge
            buf[0] = weight;
            let mut len = 1;
            for t in 0..t_len {
                let fibre: Vec<f64> = (0..counts[t])
                    .map(|i| self.normalized[t].get(assign[edges[t].u], i, assign[edges[t].v]))
                    .collect();
                for k in (0..len).rev() {
                    let base = buf[k];
                    for (i, f) in fibre.iter().enumerate() {
                        buf[k * counts[t] + i] = base * f;
                    }
                }
                len *= counts[t];
            }
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
            if !odometer(&mut assign, self.ranks.as_slice()) {
                break;
            }
        }
        Ok(out)
    }

    /// `P(i_t = . | i_1..i_{t-1} = prefix)` for zero-based edge `t`.
    ///
    /// Edges after `t` are summed over their choices, which makes their
    /// factors identically one, so only the prefix and edge `t` are contracted.
    pub fn marginal(&self, t: usize, prefix: &[usize]) -> Result<Vec<f64>, TnError> {
        let edges = self.supernet.edges();
        if t >= edges.len() || prefix.len() != t {
            return Err(TnError::Prefix {
                edge: t + 1,
                got: prefix.len(),
            });
        }
        for (s, &c) in prefix.iter().enumerate() {
            if c >= edges[s].num_choices() {
                return Err(SupernetError::ChoiceOutOfRange {
                    edge: s + 1,
                    choice: c + 1,
                    max: edges[s].num_choices(),
                }
                .into());
            }
        }
        let factors = prefix
            .iter()
            .enumerate()
            .map(|(s, &c)| self.edge_factor(s, c))
            .collect();
        let env = self.environment(t, factors)?;
        let a = &self.normalized[t];
        let (rl, c, rr) = a.shape();
        let mut p = vec![0.0; c];
        for x in 0..rl {
            for y in 0..rr {
                let w = env[x * rr + y];
                if w == 0.0 {
                    continue;
                }
                for (i, pi) in p.iter_mut().enumerate() {
                    *pi += w * a.get(x, i, y);
                }
            }
        }
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    /// Exact ancestral sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SubgraphIndex, TnError> {
        let mut picks = Vec::with_capacity(self.supernet.num_edges());
        for t in 0..self.supernet.num_edges() {
            let m = self.marginal(t, &picks)?;
            picks.push(draw(&m, rng));
        }
        Ok(SubgraphIndex::new(picks))
    }

    /// A sampler that memoizes conditionals by prefix. Draws are identical to
    /// [`Self::sample`] for the same generator state.
    pub fn sampler(&self) -> Sampler<'_> {
        Sampler {
            dist: self,
            cache: HashMap::new(),
        }
    }

    /// Most probable subgraph, ties broken lexicographically.
    pub fn argmax(&self) -> Result<ArgmaxResult, TnError> {
        match self.supernet.enumerate_indices(self.caps.enumeration) {
            Ok(iter) => {
                let mut best: Option<(SubgraphIndex, f64)> = None;
                for idx in iter {
                    let p = self.prob(&idx)?;
                    if best.as_ref().is_none_or(|(_, bp)| p > *bp) {
                        best = Some((idx, p));
                    }
                }
                let (index, probability) = best.expect("space is non-empty");
                Ok(ArgmaxResult {
                    index,
                    probability,
                    exact: true,
                })
            }
            Err(SupernetError::CapExceeded { .. }) => {
                let mut picks = Vec::with_capacity(self.supernet.num_edges());
                for t in 0..self.supernet.num_edges() {
                    let m = self.marginal(t, &picks)?;
                    picks.push(first_max(&m));
                }
                let index = SubgraphIndex::new(picks);
                let probability = self.prob(&index)?;
                Ok(ArgmaxResult {
                    index,
                    probability,
                    exact: false,
                })
            }
            Err(e) => Err(e.into()),
        }
    }

    /// The `k` most probable subgraphs, descending, lexicographic tie-break.
    /// Exact on enumerable spaces; otherwise a beam search over prefixes.
    pub fn top_k(&self, k: usize) -> Result<(Vec<RankedIndex>, bool), TnError> {
        match self.supernet.enumerate_indices(self.caps.enumeration) {
            Ok(iter) => {
                let mut all = Vec::new();
                for index in iter {
                    let probability = self.prob(&index)?;
                    all.push(RankedIndex { index, probability });
                }
                sort_ranked(&mut all);
                all.truncate(k);
                Ok((all, true))
            }
            Err(SupernetError::CapExceeded { .. }) => {
                let width = (4 * k).max(16);
                let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
                for t in 0..self.supernet.num_edges() {
                    let mut next = Vec::new();
                    for (prefix, p) in &beam {
                        let m = self.marginal(t, prefix)?;
                        for (c, q) in m.into_iter().enumerate() {
                            let mut ext = prefix.clone();
                            ext.push(c);
                            next.push((ext, p * q));
                        }
                    }
                    next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                    next.truncate(width);
                    beam = next;
                }
                let mut out: Vec<RankedIndex> = beam
                    .into_iter()
                    .map(|(p, _)| {
                        let index = SubgraphIndex::new(p);
                        let probability = self.prob(&index)?;
                        Ok(RankedIndex { index, probability })
                    })
                    .collect::<Result<_, TnError>>()?;
                sort_ranked(&mut out);
                out.truncate(k);
                Ok((out, false))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Gradient of `d P(idx) / d A` for every normalized core, plus `P(idx)`.
    fn prob_grad_normalized(&self, idx: &SubgraphIndex) -> Result<(f64, Vec<Vec<f64>>), TnError> {
        self.supernet.validate_index(idx)?;
        let t_len = self.supernet.num_edges();
        let factors: Vec<Factor> = (0..t_len)
            .map(|t| self.edge_factor(t, idx.picks()[t]))
            .collect();
        let mut value = None;
        let mut grads = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let others: Vec<Factor> = factors
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != t)
                .map(|(_, f)| f.clone())
                .collect();
            let env = self.environment(t, others)?;
            let a = &self.normalized[t];
            let (rl, c, rr) = a.shape();
            let i = idx.picks()[t];
            let mut g = vec![0.0; rl * c * rr];
            let mut z = 0.0;
            for x in 0..rl {
                for y in 0..rr {
                    let w = env[x * rr + y];
                    g[a.offset(x, i, y)] = w;
                    z += w * a.get(x, i, y);
                }
            }
            value.get_or_insert(z);
            grads.push(g);
        }
        Ok((value.expect("at least one edge"), grads))
    }

    /// Exact gradient of `log P(idx)` with respect to every raw `beta` entry.
    pub fn log_prob_grad(&self, idx: &SubgraphIndex) -> Result<CoreGrads, TnError> {
        let (p, grads) = self.prob_grad_normalized(idx)?;
        Ok(CoreGrads(
            grads
                .iter()
                .zip(&self.normalized)
                .map(|(g, a)| {
                    let mut gb = softmax_backward(a, g);
                    gb.iter_mut().for_each(|x| *x /= p);
                    gb
                })
                .collect(),
        ))
    }

    /// `E[score(idx)]` under the distribution and its exact `beta` gradient.
    /// Requires an enumerable space.
    pub fn expectation_grad<F>(&self, score: F) -> Result<(f64, CoreGrads), TnError>
    where
        F: FnMut(&SubgraphIndex) -> f64,
    {
        self.supernet.enumerable_size(self.caps.enumeration)?;
        if self.ranks.assignment_count() <= self.caps.rank_assignments as u128 {
            self.expectation_grad_by_assignments(score)
        } else {
            self.expectation_grad_by_contraction(score)
        }
    }

    /// Enumerates rank assignments and subgraphs jointly with prefix/suffix products.
    fn expectation_grad_by_assignments<F>(&self, mut score: F) -> Result<(f64, CoreGrads), TnError>
    where
        F: FnMut(&SubgraphIndex) -> f64,
    {
        let counts = self.supernet.choice_counts();
        let edges = self.supernet.edges();
        let t_len = edges.len();
        let indices: Vec<SubgraphIndex> =
            self.supernet.enumerate_indices(self.caps.enumeration)?.collect();
        let scores: Vec<f64> = indices.iter().map(&mut score).collect();
        let weight = 1.0 / self.ranks.assignment_count() as f64;

        let mut value = 0.0;
        let mut g_norm: Vec<Vec<f64>> = self.normalized.iter().map(|a| vec![0.0; a.values.len()]).collect();
        let mut assign = vec![0usize; self.supernet.num_nodes()];
        let mut prefix = vec![0.0; t_len + 1];
        let mut suffix = vec![0.0; t_len + 1];
        loop {
            let offsets: Vec<Vec<usize>> = (0..t_len)
                .map(|t| {
                    (0..counts[t])
                        .map(|i| self.normalized[t].offset(assign[edges[t].u], i, assign[edges[t].v]))
                        .collect()
                })
                .collect();
            for (idx, &s) in indices.iter().zip(&scores) {
                let picks = idx.picks();
                prefix[0] = 1.0;
                for t in 0..t_len {
                    prefix[t + 1] = prefix[t] * self.normalized[t].values[offsets[t][picks[t]]];
                }
                suffix[t_len] = 1.0;
                for t in (0..t_len).rev() {
                    suffix[t] = suffix[t + 1] * self.normalized[t].values[offsets[t][picks[t]]];
                }
                value += weight * s * prefix[t_len];
                if s != 0.0 {
                    for t in 0..t_len {
                        g_norm[t][offsets[t][picks[t]]] += weight * s * prefix[t] * suffix[t + 1];
                    }
                }
            }
            if !odometer(&mut assign, self.ranks.as_slice()) {
                break;
            }
        }
        Ok((value, self.backward(g_norm)))
    }

    /// Per-subgraph contraction with edge environments; independent of the
    /// rank-assignment count.
    fn expectation_grad_by_contraction<F>(&self, mut score: F) -> Result<(f64, CoreGrads), TnError>
    where
        F: FnMut(&SubgraphIndex) -> f64,
    {
        let mut value = 0.0;
        let mut g_norm: Vec<Vec<f64>> = self.normalized.iter().map(|a| vec![0.0; a.values.len()]).collect();
        for idx in self.supernet.enumerate_indices(self.caps.enumeration)? {
            let s = score(&idx);
            if s == 0.0 {
                continue;
            }
            let (p, grads) = self.prob_grad_normalized(&idx)?;
            value += s * p;
            for (acc, g) in g_norm.iter_mut().zip(grads) {
                for (x, y) in acc.iter_mut().zip(g) {
                    *x += s * y;
                }
            }
        }
        Ok((value, self.backward(g_norm)))
    }

    /// Maps a gradient taken with respect to the normalized cores (laid out
    /// like [`EdgeCore::values`]) onto the raw cores.
    pub fn pullback(&self, grad_normalized: Vec<Vec<f64>>) -> Result<CoreGrads, TnError> {
        if grad_normalized.len() != self.normalized.len() {
            return Err(TnError::Shape {
                edge: grad_normalized.len().min(self.normalized.len()) + 1,
                expected: self.normalized.get(grad_normalized.len()).map_or((0, 0, 0), EdgeCore::shape),
                got: (0, 0, 0),
            });
        }
        for (t, (g, a)) in grad_normalized.iter().zip(&self.normalized).enumerate() {
            if g.len() != a.values().len() {
                return Err(TnError::Shape {
                    edge: t + 1,
                    expected: a.shape(),
                    got: (0, g.len(), 0),
                });
            }
        }
        Ok(self.backward(grad_normalized))
    }

    fn backward(&self, g_norm: Vec<Vec<f64>>) -> CoreGrads {
        CoreGrads(
            g_norm
                .iter()
                .zip(&self.normalized)
                .map(|(g, a)| softmax_backward(a, g))
                .collect(),
        )
    }

    /// Sum over edges of the entropy of each edge's unconditional marginal.
    /// An upper bound on the joint entropy, cheap enough to log every step.
    pub fn entropy_proxy(&self) -> Result<f64, TnError> {
        let mut h = 0.0;
        for t in 0..self.supernet.num_edges() {
            let factors = Vec::new();
            let env = self.environment(t, factors)?;
            let a = &self.normalized[t];
            let (rl, c, rr) = a.shape();
            let mut p = vec![0.0; c];
            for x in 0..rl {
                for y in 0..rr {
                    for (i, pi) in p.iter_mut().enumerate() {
                        *pi += env[x * rr + y] * a.get(x, i, y);
                    }
                }
            }
            h -= p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
        }
        Ok(h)
    }
}

pub struct Sampler<'a> {
    dist: &'a TnDistribution,
    cache: HashMap<Vec<usize>, Vec<f64>>,
}

impl Sampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<SubgraphIndex, TnError> {
        let t_len = self.dist.supernet.num_edges();
        let mut picks = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let m = match self.cache.get(&picks) {
                Some(m) => m,
                None => {
                    let m = self.dist.marginal(t, &picks)?;
                    self.cache.entry(picks.clone()).or_insert(m)
                }
            };
            picks.push(draw(m, rng));
        }
        Ok(SubgraphIndex::new(picks))
    }
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    p.iter().rposition(|&q| q > 0.0).unwrap_or(p.len() - 1)
}

fn first_max(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &q) in p.iter().enumerate() {
        if q > p[best] {
            best = i;
        }
    }
    best
}

fn sort_ranked(v: &mut [RankedIndex]) {
    v.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.index.cmp(&b.index))
    });
}

/// Advances a mixed-radix counter; false once it wraps around.
fn odometer(counter: &mut [usize], radices: &[usize]) -> bool {
    for (c, &r) in counter.iter_mut().zip(radices).rev() {
        *c += 1;
        if *c < r {
            return true;
        }
        *c = 0;
    }
    false
}

#[cfg(test)]
mod tests;
