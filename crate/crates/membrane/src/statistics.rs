//! High-point extraction and the fractal-geometry observables: counts,
//! clusters, pairs, biggest high squares, and log-log exponent fits.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::gaussian::FieldSample;
use crate::lattice::{ball, euclid_dist_sq, Region, Site};
use crate::operators::Model;
use crate::theory::LevelThreshold;
use crate::{Error, Result};

/// Per-replica observable record; the unit every experiment emits.
/// Exponent ratios are absent (`None`) whenever the underlying count is
/// zero, never silently imputed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct HighPointRecord {
    pub model: Model,
    pub d: u8,
    pub n: u32,
    pub ell: f64,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub seed: u64,
    pub count: Option<u64>,
    pub cluster_count: Option<u64>,
    pub pair_count: Option<u64>,
    pub square_side: Option<u32>,
    pub max_value: Option<f64>,
    /// `log(count) / log N` for whichever observable the record carries.
    pub ratio: Option<f64>,
}

/// All sites of `region` at or above the threshold.
pub fn high_points(phi: &FieldSample, level: &LevelThreshold, region: &Region) -> Vec<Site> {
    let bx = phi.boxref();
    region
        .sites()
        .iter()
        .copied()
        .filter(|&x| phi.values()[bx.index_of(x).unwrap()] >= level.value)
        .collect()
}

/// Count of high points in a region.
pub fn high_point_count(phi: &FieldSample, level: &LevelThreshold, region: &Region) -> usize {
    high_points(phi, level, region).len()
}

/// Maximum over a region; ties broken by the lowest dense site index.
pub fn max_in_region(phi: &FieldSample, region: &Region) -> Result<(Site, f64)> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let bx = phi.boxref();
    let mut best_idx = usize::MAX;
    let mut best = f64::NEG_INFINITY;
    for &x in region.sites() {
        let i = bx.index_of(x)?;
        let v = phi.values()[i];
        if v > best || (v == best && i < best_idx) {
            best = v;
            best_idx = i;
        }
    }
    Ok((bx.site_at(best_idx), best))
}

/// `|H_N(α) ∩ D(x, N^β)|`: high points within the Euclidean ball of radius
/// `N^β` around `x`, where high points live in `region` (the bulk `V_N^ℓ`).
pub fn cluster_count(
    phi: &FieldSample,
    level: &LevelThreshold,
    region: &Region,
    x: Site,
    beta: f64,
) -> Result<u64> {
    let bx = phi.boxref();
    let radius = (bx.n() as f64).powf(beta);
    let (disk, _) = ball(bx, x, radius)?;
    let mut count = 0u64;
    for &y in disk.sites() {
        if region.contains(y) && phi.values()[bx.index_of(y)?] >= level.value {
            count += 1;
        }
    }
    Ok(count)
}

/// Ordered pairs of high points at Euclidean distance `<= N^β`, counted
/// with a spatial cell grid of cell side `⌈N^β⌉` (no `O(|H|²)` blowup).
/// `include_diagonal` controls whether `x = y` pairs count.
pub fn pair_count(
    phi: &FieldSample,
    level: &LevelThreshold,
    region: &Region,
    beta: f64,
    include_diagonal: bool,
) -> u64 {
    let bx = phi.boxref();
    let d = bx.d();
    let radius = (bx.n() as f64).powf(beta);
    let r2 = radius * radius;
    let cell = radius.ceil().max(1.0) as i64;
    let high = high_points(phi, level, region);
    let mut grid: HashMap<[i64; 4], Vec<Site>> = HashMap::new();
    for &x in &high {
        let mut key = [0i64; 4];
        for k in 0..d {
            key[k] = (x[k] as i64 + bx.n() as i64).div_euclid(cell);
        }
        grid.entry(key).or_default().push(x);
    }
    let mut count = 0u64;
    for &x in &high {
        let mut base = [0i64; 4];
        for k in 0..d {
            base[k] = (x[k] as i64 + bx.n() as i64).div_euclid(cell);
        }
        let mut off = [0i64; 4];
        let lim: i64 = 1;
        fn rec(
            k: usize,
            d: usize,
            lim: i64,
            base: [i64; 4],
            off: &mut [i64; 4],
            x: Site,
            r2: f64,
            include_diagonal: bool,
            grid: &HashMap<[i64; 4], Vec<Site>>,
            count: &mut u64,
        ) {
            if k == d {
                let mut key = [0i64; 4];
                for k in 0..d {
                    key[k] = base[k] + off[k];
                }
                if let Some(points) = grid.get(&key) {
                    for &y in points {
                        if !include_diagonal && y == x {
                            continue;
                        }
                        if (euclid_dist_sq(x, y, d) as f64) <= r2 {
                            *count += 1;
                        }
                    }
                }
                return;
            }
            for v in -lim..=lim {
                off[k] = v;
                rec(k + 1, d, lim, base, off, x, r2, include_diagonal, grid, count);
            }
            off[k] = 0;
        }
        rec(
            0,
            d,
            lim,
            base,
            &mut off,
            x,
            r2,
            include_diagonal,
            &grid,
            &mut count,
        );
    }
    count
}

/// d-dimensional array of field values over the full box, used by the
/// sliding-window minimum.
struct FieldArray {
    data: Vec<f64>,
    dims: [usize; 4],
    d: usize,
}

impl FieldArray {
    fn from_sample(phi: &FieldSample) -> Self {
        let bx = phi.boxref();
        let mut dims = [1usize; 4];
        for item in dims.iter_mut().take(bx.d()) {
            *item = bx.side() as usize;
        }
        FieldArray {
            data: phi.values().to_vec(),
            dims,
            d: bx.d(),
        }
    }

    /// Minimum over windows of length `w` along one axis (monotone deque
    /// per line); shrinks that axis from `L` to `L − w + 1`.
    fn window_min_axis(&self, axis: usize, w: usize) -> FieldArray {
        let len = self.dims[axis];
        debug_assert!(w >= 1 && w <= len);
        let out_len = len - w + 1;
        let mut out_dims = self.dims;
        out_dims[axis] = out_len;
        let total_out: usize = out_dims.iter().product();
        let mut out = vec![0f64; total_out];

        let stride_in: usize = self.dims[..axis].iter().product();
        let stride_out: usize = out_dims[..axis].iter().product();

        // iterate over all lines: multi-index over the non-axis dimensions
        let mut outer = [0usize; 4];
        let mut deque: std::collections::VecDeque<usize> = Default::default();
        loop {
            // base offsets of this line
            let mut base_in = 0usize;
            let mut base_out = 0usize;
            {
                let mut m_in = 1usize;
                let mut m_out = 1usize;
                for k in 0..self.d {
                    if k == axis {
                        m_in *= self.dims[k];
                        m_out *= out_dims[k];
                        continue;
                    }
                    base_in += outer[k] * m_in;
                    base_out += outer[k] * m_out;
                    m_in *= self.dims[k];
                    m_out *= out_dims[k];
                }
            }
            deque.clear();
            for i in 0..len {
                let v = self.data[base_in + i * stride_in];
                while let Some(&b) = deque.back() {
                    if self.data[base_in + b * stride_in] >= v {
                        deque.pop_back();
                    } else {
                        break;
                    }
                }
                deque.push_back(i);
                if let Some(&f) = deque.front() {
                    if f + w <= i {
                        deque.pop_front();
                    }
                }
                if i + 1 >= w {
                    let front = *deque.front().unwrap();
                    out[base_out + (i + 1 - w) * stride_out] =
                        self.data[base_in + front * stride_in];
                }
            }
            // advance outer index
            let mut k = 0;
            loop {
                if k == self.d {
                    return FieldArray {
                        data: out,
                        dims: out_dims,
                        d: self.d,
                    };
                }
                if k == axis {
                    k += 1;
                    continue;
                }
                outer[k] += 1;
                if outer[k] < self.dims[k] {
                    break;
                }
                outer[k] = 0;
                k += 1;
            }
        }
    }
}

/// Does some box of side `a` (all sites in `V_N`, center site in `region`)
/// lie entirely at or above the threshold?
fn square_qualifies(
    phi: &FieldSample,
    region: &Region,
    threshold: f64,
    a: usize,
) -> bool {
    let bx = phi.boxref();
    let side = bx.side() as usize;
    if a > side {
        return false;
    }
    let mut arr = FieldArray::from_sample(phi);
    for axis in 0..bx.d() {
        arr = arr.window_min_axis(axis, a);
    }
    // scan all window corners; center site = corner + (a-1)/2 per axis
    let c_off = ((a - 1) / 2) as i32;
    let out_len = side - a + 1;
    let d = bx.d();
    let mut corner = [0usize; 4];
    let total: usize = arr.dims.iter().product();
    for flat in 0..total {
        if arr.data[flat] >= threshold {
            let mut rem = flat;
            for item in corner.iter_mut().take(d) {
                *item = rem % out_len;
                rem /= out_len;
            }
            let mut center = [0i32; 4];
            for k in 0..d {
                center[k] = corner[k] as i32 - bx.n() + c_off;
            }
            if region.contains(center) {
                return true;
            }
        }
    }
    false
}

/// Side of the biggest sub-box uniformly at or above the threshold whose
/// center site lies in the bulk region: iterated sliding-window minimum
/// plus binary search over the side (qualification is monotone in it).
/// Returns 0 when even single sites fail.
pub fn biggest_high_square(
    phi: &FieldSample,
    level: &LevelThreshold,
    region: &Region,
) -> u32 {
    let side = phi.boxref().side() as usize;
    if !square_qualifies(phi, region, level.value, 1) {
        return 0;
    }
    let mut lo = 1usize; // qualifies
    let mut hi = side + 1; // first that does not
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if square_qualifies(phi, region, level.value, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo as u32
}

/// Least-squares fit of `log(statistic)` against `log N`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExponentFit {
    /// The fitted (log N, log statistic) points.
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root of the residual sum of squares.
    pub residual_norm: f64,
    /// 95% half-width on the slope (Student t with n−2 df; infinite for
    /// exactly 3 points only when the fit is degenerate).
    pub half_width: f64,
    /// Per-point ratios `log(statistic)/log N` (the limit in the theory is
    /// a ratio, not a slope, so both are reported).
    pub ratios: Vec<f64>,
    /// Number of non-positive statistics dropped before fitting.
    pub dropped: usize,
}

/// Fit `log stat` vs `log N` by ordinary least squares. Zero or negative
/// statistics are dropped (with a count); at least 3 distinct `N` must
/// survive.
pub fn exponent_fit(points: &[(f64, f64)]) -> Result<ExponentFit> {
    let mut logs: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    let mut dropped = 0usize;
    for &(n, stat) in points {
        if !(n > 1.0) {
            return Err(Error::InvalidParameter(format!("N must exceed 1, got {n}")));
        }
        if stat > 0.0 {
            logs.push((n.ln(), stat.ln()));
        } else {
            dropped += 1;
        }
    }
    let mut distinct: Vec<f64> = logs.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need >= 3 distinct N with positive statistics, have {}",
            distinct.len()
        )));
    }
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let denom = m * sxx - sx * sx;
    let slope = (m * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / m;
    let rss: f64 = logs
        .iter()
        .map(|&(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    let half_width = if logs.len() > 2 {
        let dof = m - 2.0;
        let s2 = rss / dof;
        let se = (s2 * m / denom).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        t * se
    } else {
        f64::INFINITY
    };
    let ratios = logs.iter().map(|&(x, y)| y / x).collect();
    Ok(ExponentFit {
        points: logs,
        slope,
        intercept,
        residual_norm: rss.sqrt(),
        half_width,
        ratios,
        dropped,
    })
}
