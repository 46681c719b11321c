use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{Candidate, ChainOptions, ChainRule, ChainScorer, ChainTask};
use super::graph::{EntityId, GraphBuilder, RelationalGraph};
use super::RelationalError;

pub const TARGET_NAME: &str = "target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedKgSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    /// Base relation ids (0-based) composing the planted chain.
    pub rule: Vec<usize>,
    /// Probability of each ordered entity pair, per base relation.
    pub density: f64,
    /// Fraction of chain-implied pairs kept as target triples.
    #[serde(default = "one")]
    pub coverage: f64,
    /// Fraction of target triples that are random pairs instead.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub options: ChainOptions,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct PlantedKg {
    pub graph: RelationalGraph,
    pub task: ChainTask,
    pub planted: ChainRule,
}

/// Random base relations `r0..`, plus a `target` relation that holds (mostly)
/// where the planted chain connects two entities. Target triples are split
/// 70/10/20; only the train part is added to the graph.
pub fn generate_planted_kg(spec: &PlantedKgSpec) -> Result<PlantedKg, RelationalError> {
    let bad = |m: &str| Err(RelationalError::Task(m.to_string()));
    if spec.n_entities < 2 || spec.n_relations == 0 {
        return bad("need at least 2 entities and 1 relation");
    }
    if spec.rule.is_empty() || spec.rule.iter().any(|&r| r >= spec.n_relations) {
        return bad("planted rule must name existing base relations");
    }
    if !(0.0..=1.0).contains(&spec.density)
        || !(0.0..=1.0).contains(&spec.coverage)
        || !(0.0..1.0).contains(&spec.noise)
    {
        return bad("density and coverage must lie in [0,1], noise in [0,1)");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_entities;

    let mut b = GraphBuilder::default();
    for e in 0..n {
        b.entity(&format!("e{e}"));
    }
    for r in 0..spec.n_relations {
        b.relation(&format!("r{r}"));
    }
    let target = b.relation(TARGET_NAME);
    for r in 0..spec.n_relations as u32 {
        for x in 0..n as u32 {
            for y in 0..n as u32 {
                if rng.random_bool(spec.density) {
                    b.push_ids((x, r, y));
                }
            }
        }
    }
    let base = b.finish();

    let rule: Vec<Candidate> = spec.rule.iter().map(|&r| Candidate::Relation(r as u32)).collect();
    let mut implied: Vec<(EntityId, EntityId)> = Vec::new();
    {
        let mut sc = ChainScorer::new(&base);
        for x in 0..n as u32 {
            for (y, _) in sc.path_counts(x, &rule).iter() {
                implied.push((x, y));
            }
        }
    }
    implied.shuffle(&mut rng);
    let n_signal = (spec.coverage * implied.len() as f64).round() as usize;
    let mut pairs: Vec<(EntityId, EntityId)> = implied[..n_signal].to_vec();
    let implied_set: HashSet<(EntityId, EntityId)> = implied.iter().copied().collect();
    let n_noise = (spec.noise / (1.0 - spec.noise) * n_signal as f64).round() as usize;
    let free = n * n - implied_set.len();
    if n_noise > free {
        return bad("noise asks for more random pairs than exist");
    }
    let mut noise_set = HashSet::new();
    while noise_set.len() < n_noise {
        let p = (rng.random_range(0..n as u32), rng.random_range(0..n as u32));
        if !implied_set.contains(&p) && noise_set.insert(p) {
            pairs.push(p);
        }
    }
    if pairs.is_empty() {
        return Err(RelationalError::EmptyTarget);
    }
    pairs.shuffle(&mut rng);
    let n_train = (0.7 * pairs.len() as f64).round() as usize;
    let n_valid = (0.1 * pairs.len() as f64).round() as usize;
    if n_train == 0 {
        return Err(RelationalError::EmptyTarget);
    }
    let train = pairs[..n_train].to_vec();
    let valid = pairs[n_train..n_train + n_valid].to_vec();
    let test = pairs[n_train + n_valid..].to_vec();

    let mut b = GraphBuilder::default();
    for e in base.entities() {
        b.entity(e);
    }
    for r in base.relations() {
        b.relation(r);
    }
    for &t in base.triples() {
        b.push_ids(t);
    }
    for &(x, y) in &train {
        b.push_ids((x, target, y));
    }
    let graph = b.finish();
    let mut opts = spec.options;
    if opts.chain_length < spec.rule.len() {
        opts.chain_length = spec.rule.len();
    }
    let task = ChainTask::new(&graph, target, train, valid, test, opts)?;
    let mut relations: Vec<String> = spec.rule.iter().map(|r| format!("r{r}")).collect();
    while relations.len() < opts.chain_length {
        relations.push(super::chain::IDENTITY_LABEL.to_string());
    }
    Ok(PlantedKg {
        graph,
        task,
        planted: ChainRule { relations, score: 1.0 },
    })
}
