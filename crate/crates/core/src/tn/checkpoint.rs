//! Core checkpoints: supernet hash, ranks and raw `beta` arrays in edge order.
//!
//! JSON floats use shortest round-trip formatting, so both formats restore
//! the parameters bit for bit. The binary layout is little-endian:
//!
//! ```text
//! b"TNSNCKPT" | u32 version | u32 len, hash bytes
//! | u32 nodes, { u32 len, name bytes, u32 rank }*
//! | u32 cores, { u32 r1, u32 c, u32 r2, f64* }*
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EdgeCore, RankMap, TnDistribution, TnError};
use crate::supernet::Supernet;

const MAGIC: &[u8; 8] = b"TNSNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Json,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub supernet_hash: String,
    /// `(node id, rank)` in supernet node order.
    pub ranks: Vec<(String, usize)>,
    /// `(r1, c, r2)` per edge.
    pub shapes: Vec<(usize, usize, usize)>,
    /// Raw `beta` values per edge, row-major.
    pub cores: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_distribution(d: &TnDistribution) -> Self {
        let s = d.supernet();
        Self {
            supernet_hash: s.content_hash(),
            ranks: s
                .nodes()
                .iter()
                .cloned()
                .zip(d.ranks().as_slice().iter().copied())
                .collect(),
            shapes: d.cores().iter().map(EdgeCore::shape).collect(),
            cores: d.cores().iter().map(|c| c.values().to_vec()).collect(),
        }
    }

    /// Rebuilds the distribution; the supernet must hash to the recorded value.
    pub fn into_distribution(self, supernet: Arc<Supernet>) -> Result<TnDistribution, TnError> {
        let hash = supernet.content_hash();
        if hash != self.supernet_hash {
            return Err(TnError::Checkpoint(format!(
                "supernet hash {hash} does not match checkpoint {}",
                self.supernet_hash
            )));
        }
        let ranks = RankMap::from_named(
            &supernet,
            self.ranks.iter().map(|(n, r)| (n.as_str(), *r)),
        )?;
        if self.shapes.len() != self.cores.len() {
            return Err(TnError::Checkpoint("shape/core count mismatch".into()));
        }
        let cores = self
            .shapes
            .into_iter()
            .zip(self.cores)
            .enumerate()
            .map(|(t, ((a, c, b), v))| {
                EdgeCore::from_values(a, c, b, v).ok_or_else(|| {
                    TnError::Checkpoint(format!("edge {}: value count does not match shape", t + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        TnDistribution::from_cores(supernet, ranks, cores)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TnError> {
        serde_json::from_str(text).map_err(|e| TnError::Checkpoint(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.supernet_hash);
        put_u32(&mut out, self.ranks.len() as u32);
        for (name, r) in &self.ranks {
            put_str(&mut out, name);
            put_u32(&mut out, *r as u32);
        }
        put_u32(&mut out, self.cores.len() as u32);
        for ((a, c, b), values) in self.shapes.iter().zip(&self.cores) {
            put_u32(&mut out, *a as u32);
            put_u32(&mut out, *c as u32);
            put_u32(&mut out, *b as u32);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TnError::Checkpoint(format!("unsupported version {version}")));
        }
        let supernet_hash = r.string()?;
        let n_nodes = r.u32()? as usize;
        let mut ranks = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let name = r.string()?;
            ranks.push((name, r.u32()? as usize));
        }
        let n_cores = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_cores);
        let mut cores = Vec::with_capacity(n_cores);
        for _ in 0..n_cores {
            let shape = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            let n = shape.0 * shape.1 * shape.2;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let b: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
                v.push(f64::from_le_bytes(b));
            }
            shapes.push(shape);
            cores.push(v);
        }
        if r.pos != bytes.len() {
            return Err(TnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            supernet_hash,
            ranks,
            shapes,
            cores,
        })
    }

    pub fn write(&self, path: &Path, format: CheckpointFormat) -> std::io::Result<()> {
        match format {
            CheckpointFormat::Json => std::fs::write(path, self.to_json()),
            CheckpointFormat::Binary => std::fs::write(path, self.to_bytes()),
        }
    }

    /// Reads either format, detected by the binary magic.
    pub fn read(path: &Path) -> Result<Self, TnError> {
        let bytes = std::fs::read(path).map_err(|e| TnError::Checkpoint(e.to_string()))?;
        if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            let text =
                String::from_utf8(bytes).map_err(|e| TnError::Checkpoint(e.to_string()))?;
            Self::from_json(&text)
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, TnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| TnError::Checkpoint(e.to_string()))
    }
}
