//! Preconditioned conjugate gradients for the SPD lattice systems.
//!
//! The bilaplacian systems are ill-conditioned (condition grows like the
//! fourth power of the side), so besides plain/Jacobi CG there is a
//! harmonic-squared preconditioner: two nested Dirichlet Laplace solves,
//! whose composition approximates the membrane covariance up to a bounded
//! bulk error. Inner solves are inexact, hence the flexible (Polak–Ribière)
//! variant is used whenever the preconditioner is itself iterative.

use crate::operators::SparseSym;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl CgConfig {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            max_iters: 200_000,
        }
    }
}

/// Preconditioner choices for [`pcg`].
pub enum Preconditioner<'a> {
    Identity,
    /// Diagonal scaling.
    Jacobi(Vec<f64>),
    /// z = Γ(Γ(r)): two Dirichlet Laplace solves against `lap`, each run
    /// with CG at `inner` tolerance.
    HarmonicSquared {
        lap: &'a SparseSym,
        inner: CgConfig,
    },
}

impl Preconditioner<'_> {
    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        match self {
            Preconditioner::Identity => Ok(r.to_vec()),
            Preconditioner::Jacobi(d) => {
                Ok(r.iter().zip(d).map(|(ri, di)| ri / di).collect())
            }
            Preconditioner::HarmonicSquared { lap, inner } => {
                let mid = pcg(lap, r, &Preconditioner::Identity, inner)?;
                let out = pcg(lap, &mid.x, &Preconditioner::Identity, inner)?;
                Ok(out.x)
            }
        }
    }

    fn is_flexible(&self) -> bool {
        matches!(self, Preconditioner::HarmonicSquared { .. })
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `A x = b` to a relative residual, starting from zero.
pub fn pcg(
    a: &SparseSym,
    b: &[f64],
    m: &Preconditioner<'_>,
    cfg: &CgConfig,
) -> Result<CgResult> {
    let n = a.n();
    debug_assert_eq!(b.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let flexible = m.is_flexible();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = m.apply(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..cfg.max_iters {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: f64::NAN,
            });
        }
        let alpha = rz / pap;
        let r_old = if flexible { Some(r.clone()) } else { None };
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= cfg.rel_tol {
            return Ok(CgResult {
                x,
                iterations: it + 1,
                rel_residual: rel,
            });
        }
        z = m.apply(&r)?;
        let rz_new = match &r_old {
            // Polak–Ribière: robust to an inexact, slightly varying M
            Some(ro) => dot(&z, &r) - dot(&z, ro),
            None => dot(&r, &z),
        };
        let beta = rz_new / rz;
        rz = if flexible { dot(&r, &z) } else { rz_new };
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / b_norm;
    Err(Error::NoConvergence {
        iterations: cfg.max_iters,
        residual: rel,
    })
}
