//! Supernets: node sets joined by multi-choice edges.
//!
//! A supernet is a multigraph whose edges each carry a list of candidate
//! choices. Picking one choice per edge yields a subgraph, identified by a
//! [`SubgraphIndex`]. Edge identity is positional: edge `t` is the `t`-th
//! entry of the edge list, and that position binds the edge to its core in
//! the tensor-network encoding.
//!
//! Internally every index is zero-based. The JSON/CSV surfaces and the
//! `Display` impls are one-based.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Default cap on the number of subgraph indices we are willing to enumerate.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum SupernetError {
    #[error("supernet parse error: {0}")]
    Parse(String),
    #[error("supernet has no edges")]
    NoEdges,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("edge {edge}: unknown endpoint {node:?}")]
    UnknownEndpoint { edge: usize, node: String },
    #[error("edge {edge}: empty choice list")]
    EmptyChoices { edge: usize },
    #[error("edge {edge}: duplicate choice label {label:?}")]
    DuplicateChoice { edge: usize, label: String },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("search space of {size} subgraphs exceeds enumeration cap {cap}")]
    CapExceeded { size: BigUint, cap: u64 },
    #[error("subgraph index has {got} entries, supernet has {expected} edges")]
    IndexLength { expected: usize, got: usize },
    #[error("edge {edge}: choice {choice} out of range 1..={max}")]
    ChoiceOutOfRange { edge: usize, choice: usize, max: usize },
}

/// Which rank slot of an edge core a node occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Position of the node `N1(t)` in the supernet node list.
    pub u: usize,
    /// Position of the node `N2(t)` in the supernet node list.
    pub v: usize,
    pub choices: Vec<String>,
}

impl Edge {
    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn is_self_loop(&self) -> bool {
        self.u == self.v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Supernet {
    name: String,
    nodes: Vec<String>,
    edges: Vec<Edge>,
    node_pos: HashMap<String, usize>,
}

/// Serialized form: `{"name", "nodes", "edges": [{"u", "v", "choices"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SupernetDocument {
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct EdgeDocument {
    pub u: String,
    pub v: String,
    pub choices: Vec<String>,
}

impl Supernet {
    /// Builds and validates a supernet from node ids and `(u, v, choices)` edges.
    pub fn new(
        name: impl Into<String>,
        nodes: Vec<String>,
        edges: Vec<(String, String, Vec<String>)>,
    ) -> Result<Self, SupernetError> {
        Self::from_document(SupernetDocument {
            name: name.into(),
            nodes,
            edges: edges
                .into_iter()
                .map(|(u, v, choices)| EdgeDocument { u, v, choices })
                .collect(),
        })
    }

    pub fn from_document(doc: SupernetDocument) -> Result<Self, SupernetError> {
        let mut node_pos = HashMap::with_capacity(doc.nodes.len());
        for (i, n) in doc.nodes.iter().enumerate() {
            if node_pos.insert(n.clone(), i).is_some() {
                return Err(SupernetError::DuplicateNode(n.clone()));
            }
        }
        if doc.edges.is_empty() {
            return Err(SupernetError::NoEdges);
        }
        let mut edges = Vec::with_capacity(doc.edges.len());
        for (t, e) in doc.edges.into_iter().enumerate() {
            let edge_no = t + 1;
            let lookup = |name: &str| {
                node_pos
                    .get(name)
                    .copied()
                    .ok_or_else(|| SupernetError::UnknownEndpoint {
                        edge: edge_no,
                        node: name.to_string(),
                    })
            };
            let u = lookup(&e.u)?;
            let v = lookup(&e.v)?;
            if e.choices.is_empty() {
                return Err(SupernetError::EmptyChoices { edge: edge_no });
            }
            let mut seen = HashSet::new();
            for c in &e.choices {
                if !seen.insert(c.as_str()) {
                    return Err(SupernetError::DuplicateChoice {
                        edge: edge_no,
                        label: c.clone(),
                    });
                }
            }
            edges.push(Edge {
                u,
                v,
                choices: e.choices,
            });
        }
        Ok(Self {
            name: doc.name,
            nodes: doc.nodes,
            edges,
            node_pos,
        })
    }

    /// Parses and validates a supernet JSON document.
    pub fn from_json(text: &str) -> Result<Self, SupernetError> {
        let doc: SupernetDocument =
            serde_json::from_str(text).map_err(|e| SupernetError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_document(&self) -> SupernetDocument {
        SupernetDocument {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    u: self.nodes[e.u].clone(),
                    v: self.nodes[e.v].clone(),
                    choices: e.choices.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("supernet document serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_vec(&self.to_document()).expect("supernet document serializes");
        hex::encode(Sha256::digest(&compact))
    }

    /// A chain `n0 - n1 - ... - nT` where every edge carries the same choices.
    pub fn chain(name: &str, choices: &[Vec<String>]) -> Result<Self, SupernetError> {
        let nodes: Vec<String> = (0..=choices.len()).map(|i| format!("n{i}")).collect();
        let edges = choices
            .iter()
            .enumerate()
            .map(|(t, c)| (nodes[t].clone(), nodes[t + 1].clone(), c.clone()))
            .collect();
        Self::new(name, nodes, edges)
    }

    /// A ring `n0 - n1 - ... - n{T-1} - n0`.
    pub fn ring(name: &str, choices: &[Vec<String>]) -> Result<Self, SupernetError> {
        let t_len = choices.len();
        let nodes: Vec<String> = (0..t_len).map(|i| format!("n{i}")).collect();
        let edges = choices
            .iter()
            .enumerate()
            .map(|(t, c)| (nodes[t].clone(), nodes[(t + 1) % t_len].clone(), c.clone()))
            .collect();
        Self::new(name, nodes, edges)
    }

    /// A star: every edge joins the hub `n0` to its own leaf.
    pub fn star(name: &str, choices: &[Vec<String>]) -> Result<Self, SupernetError> {
        let nodes: Vec<String> = (0..=choices.len()).map(|i| format!("n{i}")).collect();
        let edges = choices
            .iter()
            .enumerate()
            .map(|(t, c)| (nodes[0].clone(), nodes[t + 1].clone(), c.clone()))
            .collect();
        Self::new(name, nodes, edges)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_position(&self, id: &str) -> Option<usize> {
        self.node_pos.get(id).copied()
    }

    /// Choice counts `C_1..C_T`.
    pub fn choice_counts(&self) -> Vec<usize> {
        self.edges.iter().map(Edge::num_choices).collect()
    }

    /// Number of subgraphs, `prod_t C_t`.
    pub fn space_size(&self) -> BigUint {
        self.edges
            .iter()
            .fold(BigUint::from(1u32), |acc, e| acc * BigUint::from(e.num_choices()))
    }

    /// `space_size` as a `u64` if it does not exceed `cap`.
    pub fn enumerable_size(&self, cap: u64) -> Result<u64, SupernetError> {
        let size = self.space_size();
        match u64::try_from(&size) {
            Ok(n) if n <= cap => Ok(n),
            _ => Err(SupernetError::CapExceeded { size, cap }),
        }
    }

    /// All subgraph indices in lexicographic order, provided the space fits in `cap`.
    pub fn enumerate_indices(&self, cap: u64) -> Result<IndexIter, SupernetError> {
        self.enumerable_size(cap)?;
        Ok(IndexIter {
            radices: self.choice_counts(),
            next: Some(vec![0; self.edges.len()]),
        })
    }

    /// Every `(edge, slot)` incidence of node `id`. Self-loops list both slots.
    pub fn incident_edges(&self, id: &str) -> Result<Vec<(usize, Slot)>, SupernetError> {
        let n = self
            .node_position(id)
            .ok_or_else(|| SupernetError::UnknownNode(id.to_string()))?;
        Ok(self.incidences_of(n))
    }

    pub(crate) fn incidences_of(&self, n: usize) -> Vec<(usize, Slot)> {
        let mut out = Vec::new();
        for (t, e) in self.edges.iter().enumerate() {
            if e.u == n {
                out.push((t, Slot::First));
            }
            if e.v == n {
                out.push((t, Slot::Second));
            }
        }
        out
    }

    pub fn validate_index(&self, idx: &SubgraphIndex) -> Result<(), SupernetError> {
        if idx.len() != self.edges.len() {
            return Err(SupernetError::IndexLength {
                expected: self.edges.len(),
                got: idx.len(),
            });
        }
        for (t, (&c, e)) in idx.picks().iter().zip(&self.edges).enumerate() {
            if c >= e.num_choices() {
                return Err(SupernetError::ChoiceOutOfRange {
                    edge: t + 1,
                    choice: c + 1,
                    max: e.num_choices(),
                });
            }
        }
        Ok(())
    }

    /// Choice labels picked by `idx`, one per edge.
    pub fn labels<'a>(&'a self, idx: &SubgraphIndex) -> Vec<&'a str> {
        idx.picks()
            .iter()
            .zip(&self.edges)
            .map(|(&c, e)| e.choices[c].as_str())
            .collect()
    }
}

/// One choice per edge. Stored zero-based; printed one-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", from = "Vec<usize>")]
pub struct SubgraphIndex(Vec<usize>);

impl SubgraphIndex {
    pub fn new(zero_based: Vec<usize>) -> Self {
        Self(zero_based)
    }

    /// Builds from one-based picks. Returns `None` if any pick is zero.
    pub fn from_one_based(picks: &[usize]) -> Option<Self> {
        picks
            .iter()
            .map(|&p| p.checked_sub(1))
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }

    pub fn picks(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|p| p + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mixed-radix rank of this index in lexicographic order.
    pub fn linear_offset(&self, radices: &[usize]) -> usize {
        self.0
            .iter()
            .zip(radices)
            .fold(0, |acc, (&p, &r)| acc * r + p)
    }

    pub fn from_linear_offset(mut offset: usize, radices: &[usize]) -> Self {
        let mut picks = vec![0; radices.len()];
        for (p, &r) in picks.iter_mut().zip(radices).rev() {
            *p = offset % r;
            offset /= r;
        }
        Self(picks)
    }
}

// Serialized one-based so that JSON reports match the CSV convention.
impl From<SubgraphIndex> for Vec<usize> {
    fn from(idx: SubgraphIndex) -> Self {
        idx.one_based()
    }
}

impl From<Vec<usize>> for SubgraphIndex {
    fn from(v: Vec<usize>) -> Self {
        Self(v.into_iter().map(|p| p.saturating_sub(1)).collect())
    }
}

impl fmt::Display for SubgraphIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", p + 1)?;
        }
        write!(f, ")")
    }
}

/// Lexicographic odometer over a mixed-radix index space.
#[derive(Debug, Clone)]
pub struct IndexIter {
    radices: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for IndexIter {
    type Item = SubgraphIndex;

    fn next(&mut self) -> Option<SubgraphIndex> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut carried_out = true;
        for (p, &r) in succ.iter_mut().zip(&self.radices).rev() {
            *p += 1;
            if *p < r {
                carried_out = false;
                break;
            }
            *p = 0;
        }
        if !carried_out {
            self.next = Some(succ);
        }
        Some(SubgraphIndex(cur))
    }
}
