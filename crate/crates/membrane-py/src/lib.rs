//! CPython extension exposing the main membrane-model types and
//! operations: boxes, precision matrices, factorizations, samplers,
//! high-point statistics, and the closed-form exponent predictions.
//!
//! Build with `cargo build --release -p membrane-py`; the smoke test in
//! `python/smoke_test.py` shows how to load the resulting cdylib.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use membrane::gaussian::{self, FieldSample};
use membrane::lattice::{self, LatticeBox, Site};
use membrane::operators::{self, LaplacianConvention, Model};
use membrane::solver;
use membrane::statistics;
use membrane::theory;

fn err(e: membrane::Error) -> PyErr {
    match e {
        membrane::Error::InvalidParameter(_) | membrane::Error::InvalidDimension(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn site_from(coords: Vec<i32>) -> PyResult<Site> {
    if coords.is_empty() || coords.len() > 4 {
        return Err(PyValueError::new_err("site needs 1..=4 coordinates"));
    }
    let mut s = [0i32; 4];
    s[..coords.len()].copy_from_slice(&coords);
    Ok(s)
}

fn site_to(s: &Site, d: usize) -> Vec<i32> {
    s[..d].to_vec()
}

fn parse_model(name: &str) -> PyResult<Model> {
    match name {
        "membrane" => Ok(Model::Membrane),
        "dgff" => Ok(Model::Dgff),
        _ => Err(PyValueError::new_err(format!(
            "unknown model '{name}' (membrane|dgff)"
        ))),
    }
}

/// The centered lattice box `V_N = [-N,N]^d`.
#[pyclass(name = "Box")]
#[derive(Clone)]
struct PyBox {
    inner: LatticeBox,
}

#[pymethods]
impl PyBox {
    #[new]
    #[pyo3(signature = (n, d, budget=None))]
    fn new(n: i32, d: u8, budget: Option<u64>) -> PyResult<Self> {
        let inner = match budget {
            Some(b) => LatticeBox::with_budget(n, d, b),
            None => LatticeBox::new(n, d),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> i32 {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn side(&self) -> i32 {
        self.inner.side()
    }

    #[getter]
    fn site_count(&self) -> usize {
        self.inner.site_count()
    }

    fn contains(&self, site: Vec<i32>) -> PyResult<bool> {
        Ok(self.inner.contains(site_from(site)?))
    }

    fn index_of(&self, site: Vec<i32>) -> PyResult<usize> {
        self.inner.index_of(site_from(site)?).map_err(err)
    }

    fn site_at(&self, index: usize) -> PyResult<Vec<i32>> {
        if index >= self.inner.site_count() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(site_to(&self.inner.site_at(index), self.inner.d()))
    }

    /// Sites of the bulk region `V_N^ell`.
    fn inner_region_sites(&self, ell: f64) -> PyResult<Vec<Vec<i32>>> {
        let region = self.inner.inner_region(ell).map_err(err)?;
        Ok(region
            .sites()
            .iter()
            .map(|s| site_to(s, self.inner.d()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Box(n={}, d={})", self.inner.n(), self.inner.d())
    }
}

/// Sparse precision matrix of a model on a box.
#[pyclass(name = "Precision")]
struct PyPrecision {
    inner: operators::PrecisionMatrix,
}

#[pymethods]
impl PyPrecision {
    #[new]
    #[pyo3(signature = (bx, model="membrane"))]
    fn new(bx: &PyBox, model: &str) -> PyResult<Self> {
        let inner = operators::assemble_precision(
            &bx.inner,
            parse_model(model)?,
            LaplacianConvention::Normalized,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint().to_string()
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.inner.n_sites()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.matrix().nnz()
    }

    /// Direct sparse Cholesky with the geometric nested-dissection order.
    fn factorize(&self) -> PyResult<PyFactor> {
        let f = solver::factorize(&self.inner).map_err(err)?;
        Ok(PyFactor {
            q: self.inner.clone(),
            f,
        })
    }

    /// One Green's function column by conjugate gradients.
    #[pyo3(signature = (site, tol=1e-9))]
    fn green_column(&self, site: Vec<i32>, tol: f64) -> PyResult<Vec<f64>> {
        let cache = solver::Cache::disabled();
        let col = solver::green_column_cg(&self.inner, site_from(site)?, tol, &cache, false)
            .map_err(err)?;
        Ok(col.values)
    }

    /// Exact-covariance sample via the matched-covariance CG route
    /// (membrane model only).
    #[pyo3(signature = (seed, tol=1e-8))]
    fn sample_exact_cg(&self, seed: u64, tol: f64) -> PyResult<PySample> {
        let phi = gaussian::sample_exact_cg(&self.inner, seed, tol, false).map_err(err)?;
        Ok(PySample { inner: phi })
    }
}

/// A completed sparse Cholesky factorization.
#[pyclass(name = "Factor")]
struct PyFactor {
    q: operators::PrecisionMatrix,
    f: solver::Factorization,
}

#[pymethods]
impl PyFactor {
    #[getter]
    fn nnz_l(&self) -> usize {
        self.f.stats().nnz_l
    }

    #[getter]
    fn flops(&self) -> f64 {
        self.f.stats().flops
    }

    fn solve(&self, rhs: Vec<f64>) -> PyResult<Vec<f64>> {
        if rhs.len() != self.f.n() {
            return Err(PyValueError::new_err("rhs length mismatch"));
        }
        Ok(self.f.solve(&rhs))
    }

    /// Exact draw: covariance is the inverse precision.
    fn sample_exact(&self, seed: u64) -> PyResult<PySample> {
        let phi = gaussian::sample_exact(&self.q, &self.f, seed).map_err(err)?;
        Ok(PySample { inner: phi })
    }
}

/// One field realization with provenance.
#[pyclass(name = "Sample")]
struct PySample {
    inner: FieldSample,
}

#[pymethods]
impl PySample {
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn value_at(&self, site: Vec<i32>) -> PyResult<f64> {
        self.inner.value_at(site_from(site)?).map_err(err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.provenance().seed
    }

    #[getter]
    fn sampler(&self) -> &'static str {
        match self.inner.provenance().sampler {
            gaussian::SamplerKind::Exact => "exact",
            gaussian::SamplerKind::Gbar => "gbar",
        }
    }

    #[getter]
    fn model(&self) -> &'static str {
        match self.inner.provenance().model {
            Model::Membrane => "membrane",
            Model::Dgff => "dgff",
        }
    }

    /// Count of sites in `V_N^ell` at or above the level-`eta` threshold.
    fn high_point_count(&self, eta: f64, ell: f64) -> PyResult<usize> {
        let bx = self.inner.boxref();
        let region = bx.inner_region(ell).map_err(err)?;
        let thr = threshold_for(&self.inner, eta);
        Ok(statistics::high_point_count(&self.inner, &thr, &region))
    }

    /// Maximum over the bulk: (site, value).
    fn max_in_region(&self, ell: f64) -> PyResult<(Vec<i32>, f64)> {
        let bx = self.inner.boxref();
        let region = bx.inner_region(ell).map_err(err)?;
        let (site, value) = statistics::max_in_region(&self.inner, &region).map_err(err)?;
        Ok((site_to(&site, bx.d()), value))
    }

    /// High points within Euclidean distance `N^beta` of `center`.
    fn cluster_count(&self, alpha: f64, center: Vec<i32>, beta: f64, ell: f64) -> PyResult<u64> {
        let bx = self.inner.boxref();
        let region = bx.inner_region(ell).map_err(err)?;
        let thr = threshold_for(&self.inner, alpha);
        statistics::cluster_count(&self.inner, &thr, &region, site_from(center)?, beta)
            .map_err(err)
    }

    /// Ordered pairs of high points within distance `N^beta`.
    #[pyo3(signature = (alpha, beta, ell, include_diagonal=true))]
    fn pair_count(&self, alpha: f64, beta: f64, ell: f64, include_diagonal: bool) -> PyResult<u64> {
        let bx = self.inner.boxref();
        let region = bx.inner_region(ell).map_err(err)?;
        let thr = threshold_for(&self.inner, alpha);
        Ok(statistics::pair_count(
            &self.inner,
            &thr,
            &region,
            beta,
            include_diagonal,
        ))
    }

    /// Side of the biggest sub-box uniformly above the level-`eta`
    /// threshold with center in the bulk.
    fn biggest_high_square(&self, eta: f64, ell: f64) -> PyResult<u32> {
        let bx = self.inner.boxref();
        let region = bx.inner_region(ell).map_err(err)?;
        let thr = threshold_for(&self.inner, eta);
        Ok(statistics::biggest_high_square(&self.inner, &thr, &region))
    }
}

fn threshold_for(phi: &FieldSample, level: f64) -> theory::LevelThreshold {
    let bx = phi.boxref();
    theory::LevelThreshold::new(
        phi.provenance().model,
        bx.d(),
        level,
        bx.n() as u32,
    )
}

/// Draw a field with covariance `Ḡ_N` (one Dirichlet Laplace solve).
#[pyfunction]
#[pyo3(signature = (bx, seed, tol=1e-6))]
fn sample_gbar(bx: &PyBox, seed: u64, tol: f64) -> PyResult<PySample> {
    let phi = gaussian::sample_gbar(&bx.inner, seed, tol).map_err(err)?;
    Ok(PySample { inner: phi })
}

/// `Ḡ_N(x, y)`: inner product of two harmonic Green columns.
#[pyfunction]
fn gbar(bx: &PyBox, x: Vec<i32>, y: Vec<i32>) -> PyResult<f64> {
    let cache = solver::Cache::disabled();
    solver::gbar(&bx.inner, site_from(x)?, site_from(y)?, &cache).map_err(err)
}

/// Least-squares exponent fit of log(statistic) against log N.
#[pyfunction]
fn exponent_fit(py: Python<'_>, points: Vec<(f64, f64)>) -> PyResult<PyObject> {
    let fit = statistics::exponent_fit(&points).map_err(err)?;
    let dict = pyo3::types::PyDict::new_bound(py);
    dict.set_item("slope", fit.slope)?;
    dict.set_item("intercept", fit.intercept)?;
    dict.set_item("residual_norm", fit.residual_norm)?;
    dict.set_item("half_width", fit.half_width)?;
    dict.set_item("ratios", fit.ratios)?;
    dict.set_item("dropped", fit.dropped)?;
    Ok(dict.into())
}

macro_rules! theory_fns {
    ($m:ident, $( ($name:ident, $($arg:ident),*) ),* $(,)?) => {
        $(
            {
                #[pyfunction]
                fn $name($($arg: f64),*) -> f64 {
                    theory::$name($($arg),*)
                }
                $m.add_function(wrap_pyfunction!($name, $m)?)?;
            }
        )*
    };
}

#[pyfunction]
fn tail_upper(a: f64) -> PyResult<f64> {
    gaussian::tail_upper(a).map_err(err)
}

#[pyfunction]
fn tail_lower(a: f64) -> PyResult<f64> {
    gaussian::tail_lower(a).map_err(err)
}

#[pyfunction]
fn tail_exact(a: f64) -> PyResult<f64> {
    gaussian::tail_exact(a).map_err(err)
}

/// Euclidean ball site count (clipped to the box).
#[pyfunction]
fn ball_sites(bx: &PyBox, center: Vec<i32>, radius: f64) -> PyResult<Vec<Vec<i32>>> {
    let (region, _) = lattice::ball(&bx.inner, site_from(center)?, radius).map_err(err)?;
    Ok(region
        .sites()
        .iter()
        .map(|s| site_to(s, bx.inner.d()))
        .collect())
}

#[pymodule]
fn membrane_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_class::<PyPrecision>()?;
    m.add_class::<PyFactor>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(sample_gbar, m)?)?;
    m.add_function(wrap_pyfunction!(gbar, m)?)?;
    m.add_function(wrap_pyfunction!(exponent_fit, m)?)?;
    m.add_function(wrap_pyfunction!(tail_upper, m)?)?;
    m.add_function(wrap_pyfunction!(tail_lower, m)?)?;
    m.add_function(wrap_pyfunction!(tail_exact, m)?)?;
    m.add_function(wrap_pyfunction!(ball_sites, m)?)?;
    theory_fns!(
        m,
        (g_const,),
        (max_rate,),
        (high_point_dim, eta),
        (dgff_high_point_dim, eta),
        (cluster_dim, alpha, beta),
        (cluster_dim_conditional, alpha, beta),
        (rho, alpha, beta),
        (gamma_star, beta),
        (gamma_plus, alpha),
        (square_exp, eta),
        (f_hb, h, beta, gamma),
    );
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
