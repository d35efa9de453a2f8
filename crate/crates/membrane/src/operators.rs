//! Stencils and sparse assembly of the discrete Laplacian and bilaplacian
//! with zero boundary conditions.
//!
//! Stencil coefficients are exact rationals; they are converted to `f64`
//! once, at assembly, so identical coefficients are bit-identical wherever
//! they appear.

use std::io::{Read, Write};
use std::path::Path;

use num_rational::Ratio;
use sha2::{Digest, Sha256};

use crate::lattice::{LatticeBox, Region, Site};
use crate::{Error, Result};

/// Laplacian normalization. `Normalized` is `Δf(x) = (1/2d) Σ f(x+e) − f(x)`,
/// the convention under which the membrane variance grows like
/// `(8/π²) log N`; `Unnormalized` drops the `1/2d` and exists for
/// sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianConvention {
    Normalized,
    Unnormalized,
}

/// Which Gaussian field the precision matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Inverse discrete bilaplacian covariance (stencil reach 2).
    Membrane,
    /// Discrete Gaussian free field: inverse Dirichlet Laplacian (reach 1).
    Dgff,
}

impl Model {
    /// ℓ¹ reach of the model's stencil.
    pub fn reach(&self) -> i32 {
        match self {
            Model::Membrane => 2,
            Model::Dgff => 1,
        }
    }
}

/// A finite-difference stencil: offsets with exact rational weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stencil {
    offsets: Vec<Site>,
    coefficients: Vec<Ratio<i64>>,
}

impl Stencil {
    fn from_pairs(mut pairs: Vec<(Site, Ratio<i64>)>) -> Self {
        pairs.sort_unstable_by_key(|(o, _)| *o);
        let mut offsets = Vec::with_capacity(pairs.len());
        let mut coefficients = Vec::with_capacity(pairs.len());
        for (o, c) in pairs {
            if c != Ratio::from_integer(0) {
                offsets.push(o);
                coefficients.push(c);
            }
        }
        Self {
            offsets,
            coefficients,
        }
    }

    pub fn offsets(&self) -> &[Site] {
        &self.offsets
    }

    pub fn coefficients(&self) -> &[Ratio<i64>] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn coefficient_sum(&self) -> Ratio<i64> {
        self.coefficients.iter().sum()
    }

    /// Largest ℓ¹ norm over the support.
    pub fn reach(&self, d: usize) -> i32 {
        self.offsets
            .iter()
            .map(|o| (0..d).map(|k| o[k].abs()).sum())
            .max()
            .unwrap_or(0)
    }

    /// Exact rational coefficient at a given offset, zero if absent.
    pub fn coefficient_at(&self, offset: Site) -> Ratio<i64> {
        match self.offsets.binary_search(&offset) {
            Ok(i) => self.coefficients[i],
            Err(_) => Ratio::from_integer(0),
        }
    }

    /// Discrete convolution of two stencils (exact).
    pub fn convolve(&self, other: &Stencil) -> Stencil {
        let mut acc: std::collections::BTreeMap<Site, Ratio<i64>> = Default::default();
        for (oa, ca) in self.offsets.iter().zip(&self.coefficients) {
            for (ob, cb) in other.offsets.iter().zip(&other.coefficients) {
                let mut o = [0i32; 4];
                for k in 0..4 {
                    o[k] = oa[k] + ob[k];
                }
                *acc.entry(o).or_insert_with(|| Ratio::from_integer(0)) += ca * cb;
            }
        }
        Stencil::from_pairs(acc.into_iter().collect())
    }

    /// Apply the stencil to a field at a site.
    pub fn apply(&self, x: Site, f: impl Fn(Site) -> f64) -> f64 {
        self.offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(o, c)| {
                let mut y = x;
                for k in 0..4 {
                    y[k] += o[k];
                }
                ratio_to_f64(*c) * f(y)
            })
            .sum()
    }

    /// Apply the stencil to an integer-valued field with exact arithmetic.
    pub fn apply_exact(&self, x: Site, f: impl Fn(Site) -> i64) -> Ratio<i64> {
        self.offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(o, c)| {
                let mut y = x;
                for k in 0..4 {
                    y[k] += o[k];
                }
                c * Ratio::from_integer(f(y))
            })
            .sum()
    }
}

fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// The discrete Laplacian stencil in dimension `d`.
pub fn laplacian_stencil(d: usize, convention: LaplacianConvention) -> Stencil {
    assert!((1..=4).contains(&d), "dimension out of range");
    let (center, neighbor) = match convention {
        LaplacianConvention::Normalized => (
            Ratio::from_integer(-1),
            Ratio::new(1, 2 * d as i64),
        ),
        LaplacianConvention::Unnormalized => {
            (Ratio::from_integer(-(2 * d as i64)), Ratio::from_integer(1))
        }
    };
    let mut pairs = vec![([0i32; 4], center)];
    for k in 0..d {
        for s in [-1i32, 1] {
            let mut o = [0i32; 4];
            o[k] = s;
            pairs.push((o, neighbor));
        }
    }
    Stencil::from_pairs(pairs)
}

/// The discrete bilaplacian: self-convolution of the Laplacian stencil.
pub fn bilaplacian_stencil(d: usize, convention: LaplacianConvention) -> Stencil {
    let lap = laplacian_stencil(d, convention);
    lap.convolve(&lap)
}

/// Precision stencil of a model: `Δ²` for the membrane, `−Δ` for the DGFF
/// (so both are positive definite after truncation).
pub fn precision_stencil(model: Model, d: usize, convention: LaplacianConvention) -> Stencil {
    match model {
        Model::Membrane => bilaplacian_stencil(d, convention),
        Model::Dgff => {
            let lap = laplacian_stencil(d, convention);
            let pairs = lap
                .offsets
                .iter()
                .zip(&lap.coefficients)
                .map(|(o, c)| (*o, -c))
                .collect();
            Stencil::from_pairs(pairs)
        }
    }
}

/// Symmetric sparse matrix in CSR form with the full (both triangles)
/// pattern stored. Row indices are dense site indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Entry (i, j), zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[i] = acc;
        }
    }

    /// Exact symmetry check (bit equality of mirrored entries).
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if self.get(*c as usize, i) != *v {
                    return false;
                }
            }
        }
        true
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Build from (row, col, value) triplets; duplicates are not merged and
    /// must not occur.
    pub fn from_triplets(n: usize, mut trip: Vec<(u32, u32, f64)>) -> Self {
        trip.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &trip {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = trip.iter().map(|&(_, j, _)| j).collect();
        let vals = trip.iter().map(|&(_, _, v)| v).collect();
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    fn digest_into(&self, h: &mut Sha256) {
        h.update((self.n as u64).to_le_bytes());
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                h.update(c.to_le_bytes());
                h.update(v.to_le_bytes());
            }
        }
    }
}

/// Sparse symmetric precision matrix of a model on a box, with the
/// truncation `Q(x,y) = S(x,y) 1_{x,y ∈ V_N}` of the model stencil `S`.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    bx: LatticeBox,
    model: Model,
    convention: LaplacianConvention,
    matrix: SparseSym,
    fingerprint: String,
}

impl PrecisionMatrix {
    pub fn boxref(&self) -> &LatticeBox {
        &self.bx
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn convention(&self) -> LaplacianConvention {
        self.convention
    }

    pub fn matrix(&self) -> &SparseSym {
        &self.matrix
    }

    pub fn n_sites(&self) -> usize {
        self.matrix.n()
    }

    /// Content hash over dimensions, model, convention and all entries;
    /// the key for the solver cache.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Extract the (dense-indexed) submatrix over a region's sites, in the
    /// region's own site order.
    pub fn submatrix(&self, region: &Region) -> SparseSym {
        let sites = region.sites();
        let mut trip = Vec::new();
        for (i, &x) in sites.iter().enumerate() {
            let xi = self.bx.index_of(x).expect("region site outside box");
            let (cols, vals) = self.matrix.row(xi);
            for (c, v) in cols.iter().zip(vals) {
                let y = self.bx.site_at(*c as usize);
                if let Ok(j) = sites.binary_search(&y) {
                    trip.push((i as u32, j as u32, *v));
                }
            }
        }
        SparseSym::from_triplets(sites.len(), trip)
    }
}

/// Assemble the truncated precision matrix on a full box.
///
/// Rows are the model stencil with every column outside `V_N` dropped; this
/// is the truncation itself, not the square of a truncated operator.
pub fn assemble_precision(
    bx: &LatticeBox,
    model: Model,
    convention: LaplacianConvention,
) -> Result<PrecisionMatrix> {
    let stencil = precision_stencil(model, bx.d(), convention);
    let n = bx.site_count();
    let mut trip = Vec::with_capacity(n * stencil.len());
    for i in 0..n {
        let x = bx.site_at(i);
        for (o, c) in stencil.offsets().iter().zip(stencil.coefficients()) {
            let mut y = x;
            for k in 0..4 {
                y[k] += o[k];
            }
            if bx.contains(y) {
                let j = bx.index_of(y).unwrap();
                trip.push((i as u32, j as u32, ratio_to_f64(*c)));
            }
        }
    }
    let matrix = SparseSym::from_triplets(n, trip);
    let mut h = Sha256::new();
    h.update([bx.d() as u8, model_code(model), convention_code(convention)]);
    h.update(bx.n().to_le_bytes());
    matrix.digest_into(&mut h);
    let fingerprint = hex(&h.finalize()[..16]);
    Ok(PrecisionMatrix {
        bx: *bx,
        model,
        convention,
        matrix,
        fingerprint,
    })
}

/// Assemble the truncated precision over an arbitrary region's sites (in the
/// region's site order). For a sub-box this equals the corresponding
/// submatrix of any enclosing box's precision, which is how the 2-Markov
/// property shows up at the matrix level.
pub fn assemble_region_precision(
    region: &Region,
    model: Model,
    convention: LaplacianConvention,
) -> Result<SparseSym> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let d = region.parent().d();
    let stencil = precision_stencil(model, d, convention);
    let sites = region.sites();
    let mut trip = Vec::with_capacity(sites.len() * stencil.len());
    for (i, &x) in sites.iter().enumerate() {
        for (o, c) in stencil.offsets().iter().zip(stencil.coefficients()) {
            let mut y = x;
            for k in 0..4 {
                y[k] += o[k];
            }
            if let Ok(j) = sites.binary_search(&y) {
                trip.push((i as u32, j as u32, ratio_to_f64(*c)));
            }
        }
    }
    Ok(SparseSym::from_triplets(sites.len(), trip))
}

fn model_code(m: Model) -> u8 {
    match m {
        Model::Membrane => 0,
        Model::Dgff => 1,
    }
}

fn convention_code(c: LaplacianConvention) -> u8 {
    match c {
        LaplacianConvention::Normalized => 0,
        LaplacianConvention::Unnormalized => 1,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const DUMP_MAGIC: &[u8; 4] = b"MEMQ";
const DUMP_VERSION: u16 = 1;

/// Binary dump: versioned header followed by sorted coordinate triplets,
/// all little-endian.
pub fn write_matrix(q: &PrecisionMatrix, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&[
        q.bx.d() as u8,
        model_code(q.model),
        convention_code(q.convention),
    ])?;
    w.write_all(&q.bx.n().to_le_bytes())?;
    w.write_all(&(q.matrix.nnz() as u64).to_le_bytes())?;
    for i in 0..q.matrix.n() {
        let (cols, vals) = q.matrix.row(i);
        for (c, v) in cols.iter().zip(vals) {
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read a matrix dump written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<PrecisionMatrix> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::CorruptData("bad magic in matrix dump".into()));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    if u16::from_le_bytes(b2) != DUMP_VERSION {
        return Err(Error::CorruptData("unsupported matrix dump version".into()));
    }
    let mut b3 = [0u8; 3];
    r.read_exact(&mut b3)?;
    let d = b3[0];
    let model = match b3[1] {
        0 => Model::Membrane,
        1 => Model::Dgff,
        _ => return Err(Error::CorruptData("unknown model code".into())),
    };
    let convention = match b3[2] {
        0 => LaplacianConvention::Normalized,
        1 => LaplacianConvention::Unnormalized,
        _ => return Err(Error::CorruptData("unknown convention code".into())),
    };
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n_param = i32::from_le_bytes(b4);
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let nnz = u64::from_le_bytes(b8) as usize;
    let bx = LatticeBox::with_budget(n_param, d, u64::MAX / 4)?;
    let mut trip = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        r.read_exact(&mut b4)?;
        let i = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let j = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let v = f64::from_le_bytes(b8);
        if i as usize >= bx.site_count() || j as usize >= bx.site_count() {
            return Err(Error::CorruptData("triplet index out of range".into()));
        }
        trip.push((i, j, v));
    }
    let matrix = SparseSym::from_triplets(bx.site_count(), trip);
    let mut h = Sha256::new();
    h.update([bx.d() as u8, model_code(model), convention_code(convention)]);
    h.update(bx.n().to_le_bytes());
    matrix.digest_into(&mut h);
    let fingerprint = hex(&h.finalize()[..16]);
    Ok(PrecisionMatrix {
        bx,
        model,
        convention,
        matrix,
        fingerprint,
    })
}
