//! Simplicial sparse Cholesky, up-looking, with a caller-supplied
//! fill-reducing permutation: `P A Pᵀ = L Lᵀ`.
//!
//! The elimination-tree / reach machinery follows the classical up-looking
//! scheme: the pattern of row `k` of `L` is the union of the paths from the
//! nonzeros of row `k` of `A` to the root of the elimination tree, visited
//! in topological order.

use crate::operators::SparseSym;
use crate::{Error, Result};

/// Default cap on factor storage (values + row indices).
pub const DEFAULT_FACTOR_BUDGET: u64 = 6 * 1024 * 1024 * 1024;

/// Lower-triangular factor in compressed-column form. The first entry of
/// every column is its diagonal.
#[derive(Debug, Clone)]
pub struct CscLower {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl CscLower {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col(&self, j: usize) -> (&[u32], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.vals[r])
    }
}

/// Size and cost statistics gathered during symbolic analysis.
#[derive(Debug, Clone)]
pub struct FactorStats {
    pub n: usize,
    pub nnz_a: usize,
    pub nnz_l: usize,
    /// Σ over columns of (column length)², the numeric flop count up to a
    /// constant.
    pub flops: f64,
    pub ordering: &'static str,
}

/// A completed factorization `P A Pᵀ = L Lᵀ` of a symmetric positive
/// definite matrix, tagged with the fingerprint of its source.
#[derive(Debug, Clone)]
pub struct Factorization {
    fingerprint: String,
    perm: Vec<u32>,
    l: CscLower,
    stats: FactorStats,
}

impl Factorization {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn n(&self) -> usize {
        self.l.n
    }

    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }

    pub fn factor(&self) -> &CscLower {
        &self.l
    }

    /// `perm[new] = old`.
    pub fn perm(&self) -> &[u32] {
        &self.perm
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.l.n);
        let n = self.l.n;
        let mut y: Vec<f64> = (0..n).map(|i| b[self.perm[i] as usize]).collect();
        self.forward_in_place(&mut y);
        self.backward_in_place(&mut y);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i] as usize] = y[i];
        }
        x
    }

    /// Solve `Lᵀ w = ξ` (in the permuted order) and undo the permutation.
    ///
    /// For `ξ` standard normal the result has covariance exactly `A⁻¹`,
    /// which is what makes exact field sampling a single back-substitution.
    pub fn half_solve_transposed(&self, xi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xi.len(), self.l.n);
        let n = self.l.n;
        let mut w = xi.to_vec();
        self.backward_in_place(&mut w);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i] as usize] = w[i];
        }
        x
    }

    /// Apply the reconstruction `Pᵀ L Lᵀ P v`; equals `A v` up to round-off
    /// and backs the factual reconstruction-residual checks.
    pub fn apply_reconstruction(&self, v: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let pv: Vec<f64> = (0..n).map(|i| v[self.perm[i] as usize]).collect();
        let mut w = vec![0.0; n];
        for j in 0..n {
            let (rows, vals) = self.l.col(j);
            let mut acc = 0.0;
            for (r, lv) in rows.iter().zip(vals) {
                acc += lv * pv[*r as usize];
            }
            w[j] = acc;
        }
        let mut z = vec![0.0; n];
        for j in 0..n {
            let (rows, vals) = self.l.col(j);
            for (r, lv) in rows.iter().zip(vals) {
                z[*r as usize] += lv * w[j];
            }
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[self.perm[i] as usize] = z[i];
        }
        out
    }

    /// `L z = y` in place (permuted order).
    fn forward_in_place(&self, y: &mut [f64]) {
        let l = &self.l;
        for j in 0..l.n {
            let (rows, vals) = l.col(j);
            let zj = y[j] / vals[0];
            y[j] = zj;
            for p in 1..rows.len() {
                y[rows[p] as usize] -= vals[p] * zj;
            }
        }
    }

    /// `Lᵀ w = z` in place (permuted order).
    fn backward_in_place(&self, z: &mut [f64]) {
        let l = &self.l;
        for j in (0..l.n).rev() {
            let (rows, vals) = l.col(j);
            let mut acc = z[j];
            for p in 1..rows.len() {
                acc -= vals[p] * z[rows[p] as usize];
            }
            z[j] = acc / vals[0];
        }
    }
}

/// Symbolic analysis: permuted upper rows, elimination tree, and exact
/// column counts. Produced before any numeric allocation, so the predicted
/// fill can be inspected (and budgeted) first.
pub struct Symbolic {
    perm: Vec<u32>,
    upper_ptr: Vec<usize>,
    upper_j: Vec<u32>,
    upper_v: Vec<f64>,
    parent: Vec<u32>,
    col_ptr: Vec<usize>,
    stats: FactorStats,
}

const NONE: u32 = u32::MAX;

impl Symbolic {
    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }

    /// Predicted factor storage in bytes (values + row indices).
    pub fn predicted_bytes(&self) -> u64 {
        self.stats.nnz_l as u64 * 12
    }
}

/// Symbolic phase over a symmetric matrix and permutation (`perm[new] = old`).
pub fn analyze(a: &SparseSym, perm: Vec<u32>, ordering: &'static str) -> Symbolic {
    let n = a.n();
    assert_eq!(perm.len(), n);
    let mut inv_perm = vec![0u32; n];
    for (new, &old) in perm.iter().enumerate() {
        inv_perm[old as usize] = new as u32;
    }

    // upper triangle of the permuted matrix, by permuted row:
    // row k holds (j, value) with j <= k
    let mut upper_ptr = vec![0usize; n + 1];
    for k in 0..n {
        let (cols, _) = a.row(perm[k] as usize);
        upper_ptr[k + 1] = cols
            .iter()
            .filter(|&&c| inv_perm[c as usize] as usize <= k)
            .count();
    }
    for k in 0..n {
        upper_ptr[k + 1] += upper_ptr[k];
    }
    let mut upper_j = vec![0u32; upper_ptr[n]];
    let mut upper_v = vec![0f64; upper_ptr[n]];
    {
        let mut cursor = upper_ptr.clone();
        for k in 0..n {
            let (cols, vals) = a.row(perm[k] as usize);
            for (c, v) in cols.iter().zip(vals) {
                let j = inv_perm[*c as usize] as usize;
                if j <= k {
                    upper_j[cursor[k]] = j as u32;
                    upper_v[cursor[k]] = *v;
                    cursor[k] += 1;
                }
            }
        }
    }

    // elimination tree with path compression
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for p in upper_ptr[k]..upper_ptr[k + 1] {
            let mut i = upper_j[p] as usize;
            while i < k {
                let next = ancestor[i];
                ancestor[i] = k as u32;
                if next == NONE {
                    parent[i] = k as u32;
                    break;
                }
                i = next as usize;
            }
        }
    }

    // column counts via the row patterns (ereach per row)
    let mut counts = vec![1usize; n]; // diagonals
    let mut mark = vec![NONE; n];
    for k in 0..n {
        mark[k] = k as u32;
        for p in upper_ptr[k]..upper_ptr[k + 1] {
            let mut i = upper_j[p] as usize;
            if i == k {
                continue;
            }
            while mark[i] != k as u32 {
                mark[i] = k as u32;
                counts[i] += 1;
                debug_assert!(parent[i] != NONE);
                i = parent[i] as usize;
            }
        }
    }
    let nnz_l: usize = counts.iter().sum();
    let flops: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    let mut col_ptr = vec![0usize; n + 1];
    for j in 0..n {
        col_ptr[j + 1] = col_ptr[j] + counts[j];
    }
    Symbolic {
        perm,
        upper_ptr,
        upper_j,
        upper_v,
        parent,
        col_ptr,
        stats: FactorStats {
            n,
            nnz_a: a.nnz(),
            nnz_l,
            flops,
            ordering,
        },
    }
}

/// Numeric up-looking factorization of an analyzed system.
pub fn factor_numeric(sym: Symbolic, fingerprint: &str, budget_bytes: u64) -> Result<Factorization> {
    let bytes = sym.predicted_bytes();
    if bytes > budget_bytes {
        return Err(Error::FactorBudgetExceeded {
            bytes,
            budget: budget_bytes,
        });
    }
    let Symbolic {
        perm,
        upper_ptr,
        upper_j,
        upper_v,
        parent,
        col_ptr,
        stats,
    } = sym;
    let n = stats.n;
    let nnz_l = stats.nnz_l;
    let mut row_idx = vec![0u32; nnz_l];
    let mut vals = vec![0f64; nnz_l];
    let mut cursor: Vec<usize> = col_ptr[..n].to_vec();

    let mut x = vec![0f64; n];
    let mut mark = vec![NONE; n];
    let mut stack = vec![0u32; n];
    for k in 0..n {
        // pattern of row k in topological order, built back to front
        let mut top = n;
        mark[k] = k as u32;
        let mut diag = 0.0;
        for p in upper_ptr[k]..upper_ptr[k + 1] {
            let j = upper_j[p] as usize;
            if j == k {
                diag = upper_v[p];
                continue;
            }
            x[j] = upper_v[p];
            let mut len = 0usize;
            let mut i = j;
            while mark[i] != k as u32 {
                stack[len] = i as u32;
                len += 1;
                mark[i] = k as u32;
                i = parent[i] as usize;
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                stack[top] = stack[len];
            }
        }
        let mut d = diag;
        for t in top..n {
            let j = stack[t] as usize;
            let lkj = x[j] / vals[col_ptr[j]];
            x[j] = 0.0;
            for p in col_ptr[j] + 1..cursor[j] {
                x[row_idx[p] as usize] -= vals[p] * lkj;
            }
            d -= lkj * lkj;
            row_idx[cursor[j]] = k as u32;
            vals[cursor[j]] = lkj;
            cursor[j] += 1;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: k, value: d });
        }
        row_idx[cursor[k]] = k as u32;
        vals[cursor[k]] = d.sqrt();
        cursor[k] += 1;
    }
    debug_assert!((0..n).all(|j| cursor[j] == col_ptr[j + 1]));

    Ok(Factorization {
        fingerprint: fingerprint.to_string(),
        perm,
        l: CscLower {
            n,
            col_ptr,
            row_idx,
            vals,
        },
        stats,
    })
}

/// Factorize with an explicit permutation (`perm[new] = old`).
pub fn factor_spd(
    a: &SparseSym,
    perm: Vec<u32>,
    fingerprint: &str,
    ordering: &'static str,
    budget_bytes: u64,
) -> Result<Factorization> {
    factor_numeric(analyze(a, perm, ordering), fingerprint, budget_bytes)
}
