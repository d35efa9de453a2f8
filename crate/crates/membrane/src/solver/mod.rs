//! Sparse SPD factorization, Green's function columns, Dirichlet Laplace
//! solves, `Ḡ` evaluation, and a persistent solve cache.
//!
//! Strategy: direct factorization (geometric nested dissection + simplicial
//! Cholesky) where the factor fits, conjugate gradients beyond; the two
//! paths agree to solver tolerance and the tests hold them to it.

mod cache;
mod cholesky;
mod ordering;
mod pcg;

pub use cache::Cache;
pub use cholesky::{CscLower, FactorStats, Factorization, Symbolic, DEFAULT_FACTOR_BUDGET};
pub use pcg::{pcg, CgConfig, CgResult, Preconditioner};

use crate::lattice::{LatticeBox, Site};
use crate::operators::{
    assemble_precision, LaplacianConvention, Model, PrecisionMatrix, SparseSym,
};
use crate::{Error, Result};

/// Relative residual for Green-column solves (these feed covariance tests).
pub const GREEN_TOL: f64 = 1e-9;
/// Relative residual for sampling solves (statistical error dominates).
pub const SAMPLE_TOL: f64 = 1e-6;
/// Relative residual for the harmonic (Laplace) solves inside `Ḡ`.
pub const HARMONIC_TOL: f64 = 1e-11;

/// One column of the Green's function `G(x, ·)`, i.e. the covariance of the
/// field at `x` with every site.
#[derive(Debug, Clone)]
pub struct GreenColumn {
    pub source: Site,
    pub values: Vec<f64>,
}

/// Factorize a precision matrix with the geometric nested-dissection
/// ordering matched to its stencil reach.
pub fn factorize(q: &PrecisionMatrix) -> Result<Factorization> {
    factorize_with_budget(q, DEFAULT_FACTOR_BUDGET)
}

/// Like [`factorize`] with an explicit factor-memory budget; the predicted
/// fill is checked before any numeric allocation.
pub fn factorize_with_budget(q: &PrecisionMatrix, budget_bytes: u64) -> Result<Factorization> {
    let bx = q.boxref();
    let perm =
        ordering::nested_dissection_box(bx.side() as usize, bx.d(), q.model().reach() as usize);
    cholesky::factor_spd(q.matrix(), perm, q.fingerprint(), "geometric-nd", budget_bytes)
}

/// Factorize an arbitrary (small) SPD system in natural order.
pub fn factorize_matrix(a: &SparseSym, fingerprint: &str) -> Result<Factorization> {
    cholesky::factor_spd(
        a,
        ordering::natural(a.n()),
        fingerprint,
        "natural",
        DEFAULT_FACTOR_BUDGET,
    )
}

/// Symbolic analysis only: predicted fill and flop count of the direct
/// factorization, before allocating anything numeric. Used to decide
/// between the direct and iterative strategies.
pub fn predict_factor(q: &PrecisionMatrix) -> Symbolic {
    let bx = q.boxref();
    let perm =
        ordering::nested_dissection_box(bx.side() as usize, bx.d(), q.model().reach() as usize);
    cholesky::analyze(q.matrix(), perm, "geometric-nd")
}

/// Green's function column through the direct factorization.
pub fn green_column(f: &Factorization, bx: &LatticeBox, x: Site) -> Result<GreenColumn> {
    let i = bx.index_of(x)?;
    let mut e = vec![0.0; f.n()];
    e[i] = 1.0;
    Ok(GreenColumn {
        source: x,
        values: f.solve(&e),
    })
}

/// Green's function column by conjugate gradients, cached on the matrix
/// fingerprint. `harmonic_preconditioner` switches on the nested-Laplace
/// preconditioner (worth it for large bilaplacian systems).
pub fn green_column_cg(
    q: &PrecisionMatrix,
    x: Site,
    tol: f64,
    cache: &Cache,
    harmonic_preconditioner: bool,
) -> Result<GreenColumn> {
    let bx = q.boxref();
    let i = bx.index_of(x)?;
    let op = format!("green_i{}_t{:e}", i, tol);
    if let Some(values) = cache.get_f64s(q.fingerprint(), &op) {
        if values.len() == q.n_sites() {
            return Ok(GreenColumn { source: x, values });
        }
    }
    let mut e = vec![0.0; q.n_sites()];
    e[i] = 1.0;
    let cfg = CgConfig::new(tol);
    let res = if harmonic_preconditioner && q.model() == Model::Membrane {
        let lap = assemble_precision(bx, Model::Dgff, LaplacianConvention::Normalized)?;
        pcg(
            q.matrix(),
            &e,
            &Preconditioner::HarmonicSquared {
                lap: lap.matrix(),
                inner: CgConfig::new((tol * 1e-1).max(1e-12)),
            },
            &cfg,
        )?
    } else {
        pcg(q.matrix(), &e, &Preconditioner::Identity, &cfg)?
    };
    cache.put_f64s(q.fingerprint(), &op, &res.x);
    Ok(GreenColumn {
        source: x,
        values: res.x,
    })
}

/// The Dirichlet harmonic operator `Γ_N` on a box: the inverse of the
/// (normalized) Laplacian with zero boundary, whose column at `x` is the
/// expected visit count of a simple random walk started at `x` and killed
/// on leaving `V_N`.
pub fn laplace_precision(bx: &LatticeBox) -> Result<PrecisionMatrix> {
    assemble_precision(bx, Model::Dgff, LaplacianConvention::Normalized)
}

/// Apply `Γ_N`: solve the Dirichlet Laplace system for an arbitrary
/// right-hand side (Green columns for `rhs = e_x`, the `Ḡ` sampler for
/// white-noise `rhs`).
pub fn solve_laplace(bx: &LatticeBox, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let lap = laplace_precision(bx)?;
    if rhs.len() != lap.n_sites() {
        return Err(Error::InvalidParameter(format!(
            "rhs length {} does not match {} sites",
            rhs.len(),
            lap.n_sites()
        )));
    }
    let res = pcg(lap.matrix(), rhs, &Preconditioner::Identity, &CgConfig::new(tol))?;
    Ok(res.x)
}

/// Harmonic Green column `Γ_N(x, ·)`, cached.
pub fn harmonic_column(bx: &LatticeBox, x: Site, cache: &Cache) -> Result<Vec<f64>> {
    let lap = laplace_precision(bx)?;
    let i = bx.index_of(x)?;
    let op = format!("harmonic_i{i}");
    if let Some(values) = cache.get_f64s(lap.fingerprint(), &op) {
        if values.len() == lap.n_sites() {
            return Ok(values);
        }
    }
    let mut e = vec![0.0; lap.n_sites()];
    e[i] = 1.0;
    let res = pcg(
        lap.matrix(),
        &e,
        &Preconditioner::Identity,
        &CgConfig::new(HARMONIC_TOL),
    )?;
    cache.put_f64s(lap.fingerprint(), &op, &res.x);
    Ok(res.x)
}

/// `Ḡ_N(x,y) = Σ_z Γ_N(x,z) Γ_N(z,y)`: the inner product of two harmonic
/// Green columns; symmetric by construction.
pub fn gbar(bx: &LatticeBox, x: Site, y: Site, cache: &Cache) -> Result<f64> {
    let gx = harmonic_column(bx, x, cache)?;
    let gy = harmonic_column(bx, y, cache)?;
    Ok(gx.iter().zip(&gy).map(|(a, b)| a * b).sum())
}
