//! Sparse entity vectors and a reusable scatter accumulator.

use super::graph::{Csr, EntityId};

/// Sorted `(entity, value)` pairs with no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub idx: Vec<EntityId>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn unit(e: EntityId, v: f64) -> Self {
        Self { idx: vec![e], val: vec![v] }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn get(&self, e: EntityId) -> f64 {
        match self.idx.binary_search(&e) {
            Ok(k) => self.val[k],
            Err(_) => 0.0,
        }
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b, mut s) = (0, 0, 0.0);
        while a < self.idx.len() && b < other.idx.len() {
            match self.idx[a].cmp(&other.idx[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    s += self.val[a] * other.val[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }
}

/// Dense scratch of length `n_e` that only ever visits the entries it touched.
pub struct Accumulator {
    dense: Vec<f64>,
    touched: Vec<EntityId>,
    mark: Vec<bool>,
    /// Largest number of simultaneously touched entries seen so far.
    pub peak: usize,
}

impl Accumulator {
    pub fn new(n: usize) -> Self {
        Self {
            dense: vec![0.0; n],
            touched: Vec::new(),
            mark: vec![false; n],
            peak: 0,
        }
    }

    #[inline]
    pub fn add(&mut self, e: EntityId, v: f64) {
        let k = e as usize;
        if !self.mark[k] {
            self.mark[k] = true;
            self.touched.push(e);
        }
        self.dense[k] += v;
    }

    /// `x * A`: row-vector times matrix, scattering along rows of `a`.
    pub fn add_vec_mat(&mut self, x: &SparseVec, a: &Csr, scale: f64) {
        for (e, v) in x.iter() {
            for &c in a.row(e) {
                self.add(c, v * scale);
            }
        }
    }

    pub fn add_vec(&mut self, x: &SparseVec, scale: f64) {
        for (e, v) in x.iter() {
            self.add(e, v * scale);
        }
    }

    /// Drains into a sorted sparse vector and resets the scratch.
    pub fn take(&mut self) -> SparseVec {
        self.peak = self.peak.max(self.touched.len());
        self.touched.sort_unstable();
        let mut out = SparseVec::default();
        for &e in &self.touched {
            let k = e as usize;
            let v = self.dense[k];
            if v != 0.0 {
                out.idx.push(e);
                out.val.push(v);
            }
            self.dense[k] = 0.0;
            self.mark[k] = false;
        }
        self.touched.clear();
        out
    }
}
