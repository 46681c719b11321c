//! Dense factor tables and weighted variable elimination.
//!
//! Every supernet node carries a rank index `r_n`. An edge contributes a
//! factor over the rank indices of its endpoints; summing a node's index out
//! is weighted by `1/R_n`, which folds the `1/prod R_n` normalization into
//! the elimination itself. A node that touches no factor sums to exactly one
//! and is skipped.

use super::TnError;

/// A dense table over a sorted set of node variables, row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Factor {
    pub vars: Vec<usize>,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Factor {
    #[cfg(test)]
    pub fn scalar(value: f64) -> Self {
        Self {
            vars: Vec::new(),
            dims: Vec::new(),
            data: vec![value],
        }
    }

    /// Factor over two distinct variables `a`, `b` from an `[a][b]` matrix.
    pub fn pair(a: usize, da: usize, b: usize, db: usize, m: Vec<f64>) -> Self {
        debug_assert_ne!(a, b);
        debug_assert_eq!(m.len(), da * db);
        if a < b {
            Self {
                vars: vec![a, b],
                dims: vec![da, db],
                data: m,
            }
        } else {
            let mut t = vec![0.0; m.len()];
            for i in 0..da {
                for j in 0..db {
                    t[j * da + i] = m[i * db + j];
                }
            }
            Self {
                vars: vec![b, a],
                dims: vec![db, da],
                data: t,
            }
        }
    }

    pub fn single(a: usize, v: Vec<f64>) -> Self {
        Self {
            vars: vec![a],
            dims: vec![v.len()],
            data: v,
        }
    }

    fn stride_of(&self, var: usize) -> Option<usize> {
        let pos = self.vars.iter().position(|&v| v == var)?;
        Some(self.dims[pos + 1..].iter().product())
    }

    /// Value at a full assignment given as `(var, value)` lookups.
    pub fn get(&self, assign: impl Fn(usize) -> usize) -> f64 {
        let mut off = 0;
        for (&v, &d) in self.vars.iter().zip(&self.dims) {
            off = off * d + assign(v);
        }
        self.data[off]
    }
}

fn union_scope(factors: &[&Factor]) -> (Vec<usize>, Vec<usize>) {
    let mut pairs: Vec<(usize, usize)> = factors
        .iter()
        .flat_map(|f| f.vars.iter().copied().zip(f.dims.iter().copied()))
        .collect();
    pairs.sort_unstable();
    pairs.dedup_by_key(|p| p.0);
    pairs.into_iter().unzip()
}

fn scope_size(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Pointwise product of `factors`, then sum out `drop` (if any) with `weight`.
fn product_sum_out(factors: &[&Factor], drop: Option<(usize, &[f64])>) -> Factor {
    let (vars, dims) = union_scope(factors);
    let strides: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| vars.iter().map(|&v| f.stride_of(v).unwrap_or(0)).collect())
        .collect();
    let drop_pos = drop.map(|(v, _)| vars.iter().position(|&x| x == v).expect("dropped var in scope"));

    let (out_vars, out_dims): (Vec<usize>, Vec<usize>) = vars
        .iter()
        .zip(&dims)
        .enumerate()
        .filter(|(k, _)| Some(*k) != drop_pos)
        .map(|(_, (&v, &d))| (v, d))
        .unzip();
    let mut out = vec![0.0; scope_size(&out_dims)];
    let out_strides: Vec<usize> = {
        let mut s = Vec::with_capacity(vars.len());
        for k in 0..vars.len() {
            if Some(k) == drop_pos {
                s.push(0);
            } else {
                let after: usize = (k + 1..vars.len())
                    .filter(|&j| Some(j) != drop_pos)
                    .map(|j| dims[j])
                    .product();
                s.push(after);
            }
        }
        s
    };

    let total = scope_size(&dims);
    let mut counter = vec![0usize; vars.len()];
    let mut offs = vec![0usize; factors.len()];
    let mut out_off = 0usize;
    for _ in 0..total {
        let mut val = 1.0;
        for (f, &o) in factors.iter().zip(&offs) {
            val *= f.data[o];
        }
        if let (Some(p), Some((_, w))) = (drop_pos, drop) {
            val *= w[counter[p]];
        }
        out[out_off] += val;

        // odometer step
        for k in (0..vars.len()).rev() {
            counter[k] += 1;
            for (o, s) in offs.iter_mut().zip(&strides) {
                *o += s[k];
            }
            out_off += out_strides[k];
            if counter[k] < dims[k] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(&strides) {
                *o -= s[k] * dims[k];
            }
            out_off -= out_strides[k] * dims[k];
            counter[k] = 0;
        }
    }
    Factor {
        vars: out_vars,
        dims: out_dims,
        data: out,
    }
}

/// Contracts `factors`, summing every variable outside `keep` with its weight
/// vector. The result is a factor over exactly `keep` (sorted, deduplicated)
/// with the kept variables' weights already multiplied in.
///
/// Elimination order is greedy: the variable whose elimination produces the
/// smallest intermediate table goes first, ties broken by lower node index.
pub(crate) fn contract(
    mut factors: Vec<Factor>,
    weights: &[Vec<f64>],
    keep: &[usize],
    size_cap: usize,
) -> Result<Factor, TnError> {
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();

    loop {
        let mut best: Option<(usize, usize)> = None; // (size, var)
        let mut candidates: Vec<usize> = factors
            .iter()
            .flat_map(|f| f.vars.iter().copied())
            .filter(|v| keep.binary_search(v).is_err())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.is_empty() {
            break;
        }
        for &v in &candidates {
            let touching: Vec<&Factor> = factors.iter().filter(|f| f.vars.contains(&v)).collect();
            let (_, dims) = union_scope(&touching);
            let size = scope_size(&dims);
            if best.is_none_or(|(s, _)| size < s) {
                best = Some((size, v));
            }
        }
        let (size, var) = best.expect("non-empty candidate set");
        if size > size_cap {
            return Err(TnError::ContractionTooLarge { size, cap: size_cap });
        }
        let (touching, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.vars.contains(&var));
        let refs: Vec<&Factor> = touching.iter().collect();
        let reduced = product_sum_out(&refs, Some((var, &weights[var])));
        factors = rest;
        factors.push(reduced);
    }

    // Only kept variables (or scalars) remain.
    let mut scope_factors: Vec<Factor> = keep
        .iter()
        .map(|&k| Factor::single(k, weights[k].clone()))
        .collect();
    scope_factors.append(&mut factors);
    let refs: Vec<&Factor> = scope_factors.iter().collect();
    let (_, dims) = union_scope(&refs);
    if scope_size(&dims) > size_cap {
        return Err(TnError::ContractionTooLarge {
            size: scope_size(&dims),
            cap: size_cap,
        });
    }
    Ok(product_sum_out(&refs, None))
}
