use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::RelationalError;

pub type EntityId = u32;
pub type RelationId = u32;

/// `(head, relation, tail)`.
pub type Triple = (EntityId, RelationId, EntityId);

/// Row-compressed 0/1 matrix; each row lists its column ids in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Csr {
    offsets: Vec<usize>,
    cols: Vec<EntityId>,
}

impl Csr {
    fn build(n: usize, mut pairs: Vec<(EntityId, EntityId)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(r, _) in &pairs {
            offsets[r as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            cols: pairs.into_iter().map(|(_, c)| c).collect(),
        }
    }

    pub fn row(&self, r: EntityId) -> &[EntityId] {
        let r = r as usize;
        &self.cols[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn contains(&self, r: EntityId, c: EntityId) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }
}

/// Entities, relations and one sparse adjacency matrix per relation, stored
/// both row-wise (`forward`) and column-wise (`reverse`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RelationalGraph {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    forward: Vec<Csr>,
    reverse: Vec<Csr>,
}

impl RelationalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from labelled triples; ids follow first appearance,
    /// head before relation before tail.
    pub fn from_labeled<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut b = GraphBuilder::default();
        for (h, r, t) in triples {
            b.push(h, r, t);
        }
        b.finish()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    /// Distinct triples in first-seen order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn adjacency(&self, r: RelationId) -> &Csr {
        &self.forward[r as usize]
    }

    pub fn reverse_adjacency(&self, r: RelationId) -> &Csr {
        &self.reverse[r as usize]
    }

    pub fn has_triple(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.forward[r as usize].contains(h, t)
    }

    /// Stable digest of vocabularies and triples.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (h_, r, t) in &self.triples {
            h.update(self.entities[*h_ as usize].as_bytes());
            h.update([0]);
            h.update(self.relations[*r as usize].as_bytes());
            h.update([0]);
            h.update(self.entities[*t as usize].as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())
    }
}

/// Incremental construction with deduplication.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
}

impl GraphBuilder {
    pub fn entity(&mut self, name: &str) -> EntityId {
        intern(&mut self.entities, &mut self.entity_ids, name)
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        intern(&mut self.relations, &mut self.relation_ids, name)
    }

    /// Returns the triple's ids; duplicates are stored once.
    pub fn push(&mut self, h: &str, r: &str, t: &str) -> Triple {
        let h = self.entity(h);
        let r = self.relation(r);
        let t = self.entity(t);
        let tr = (h, r, t);
        if self.seen.insert(tr) {
            self.triples.push(tr);
        }
        tr
    }

    pub fn push_ids(&mut self, tr: Triple) {
        if self.seen.insert(tr) {
            self.triples.push(tr);
        }
    }

    pub fn finish(self) -> RelationalGraph {
        let n = self.entities.len();
        let mut fwd: Vec<Vec<(EntityId, EntityId)>> = vec![Vec::new(); self.relations.len()];
        for &(h, r, t) in &self.triples {
            fwd[r as usize].push((h, t));
        }
        let reverse = fwd
            .iter()
            .map(|p| Csr::build(n, p.iter().map(|&(h, t)| (t, h)).collect()))
            .collect();
        let forward = fwd.into_iter().map(|p| Csr::build(n, p)).collect();
        RelationalGraph {
            entities: self.entities,
            entity_ids: self.entity_ids,
            relations: self.relations,
            relation_ids: self.relation_ids,
            triples: self.triples,
            forward,
            reverse,
        }
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, u32>, name: &str) -> u32 {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len() as u32;
    names.push(name.to_string());
    ids.insert(name.to_string(), id);
    id
}

/// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped.
pub fn parse_triples(text: &str) -> Result<Vec<(String, String, String)>, RelationalError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 || f.iter().any(|s| s.trim().is_empty()) {
            return Err(RelationalError::Malformed {
                line: k + 1,
                msg: format!("expected head<TAB>relation<TAB>tail, found {} field(s)", f.len()),
            });
        }
        out.push((f[0].trim().to_string(), f[1].trim().to_string(), f[2].trim().to_string()));
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String, RelationalError> {
    std::fs::read_to_string(path).map_err(|e| RelationalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads one triples TSV file.
pub fn load_triples(path: &Path) -> Result<RelationalGraph, RelationalError> {
    let rows = parse_triples(&read_file(path)?).map_err(|e| e.in_file(path))?;
    if rows.is_empty() {
        return Err(RelationalError::Empty(path.display().to_string()));
    }
    Ok(RelationalGraph::from_labeled(
        rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
    ))
}

/// A dataset directory with `train.txt`, `valid.txt`, `test.txt` and an
/// optional `facts.txt`.
#[derive(Debug, Clone)]
pub struct KgDataset {
    /// Facts (or train triples when there is no facts file) plus train
    /// triples; valid and test triples are only interned, never added.
    pub graph: RelationalGraph,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl KgDataset {
    pub fn load_dir(dir: &Path) -> Result<Self, RelationalError> {
        let read = |name: &str| -> Result<Vec<(String, String, String)>, RelationalError> {
            let p = dir.join(name);
            parse_triples(&read_file(&p)?).map_err(|e| e.in_file(&p))
        };
        let facts_path = dir.join("facts.txt");
        let facts = if facts_path.exists() { read("facts.txt")? } else { Vec::new() };
        let train = read("train.txt")?;
        let valid = read("valid.txt")?;
        let test = read("test.txt")?;
        if train.is_empty() {
            return Err(RelationalError::Empty(dir.join("train.txt").display().to_string()));
        }
        let mut b = GraphBuilder::default();
        for (h, r, t) in &facts {
            b.push(h, r, t);
        }
        let train: Vec<Triple> = train.iter().map(|(h, r, t)| b.push(h, r, t)).collect();
        let mut intern_only = |rows: &[(String, String, String)]| -> Vec<Triple> {
            rows.iter()
                .map(|(h, r, t)| (b.entity(h), b.relation(r), b.entity(t)))
                .collect()
        };
        let valid = intern_only(&valid);
        let test = intern_only(&test);
        Ok(Self {
            graph: b.finish(),
            train,
            valid,
            test,
        })
    }

    /// Every known triple across facts and all splits.
    pub fn all_known(&self) -> HashSet<Triple> {
        self.graph
            .triples()
            .iter()
            .chain(&self.train)
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect()
    }
}
