//! Subgraph search over supernets with tensor-network encoded distributions.
//!
//! A [`supernet::Supernet`] is a multigraph whose edges carry several
//! candidate choices. [`tn::TnDistribution`] places a probability on every
//! subgraph through one small core per edge, with rank indices shared at the
//! nodes, so the encoding follows the supernet's topology. [`search`]
//! optimizes those cores by gradient ascent, either on sampled rewards or on
//! an exact relaxed objective, and [`tabular`] / [`relational`] provide task
//! backends.

pub mod relational;
pub mod search;
pub mod supernet;
pub mod tabular;
pub mod tn;

pub use supernet::{Slot, SubgraphIndex, Supernet, SupernetError};
pub use tn::{Caps, CoreGrads, EdgeCore, InitSpec, RankMap, TnDistribution, TnError};
