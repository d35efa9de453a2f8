//! Integer-lattice geometry: centered boxes `V_N = [-N,N]^d ∩ Z^d`, inner
//! regions, double boundaries, balls, and gapped sub-box partitions.
//!
//! Sites are stored as `[i32; 4]` with unused trailing coordinates pinned to
//! zero, so the same site type serves every dimension `d <= 4`.

use crate::{Error, Result};

/// A lattice site. Coordinates beyond the box dimension must be zero.
pub type Site = [i32; 4];

/// Default hard cap on interior sites; 4-dimensional boxes explode quickly.
pub const DEFAULT_SITE_BUDGET: u64 = 2_000_000;

/// Distance used for shells and boundaries. The bilaplacian stencil reaches
/// two lattice steps, and both metrics below contain that reach at radius 2;
/// `Linf` is the default throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Linf,
    L1,
}

impl Metric {
    /// Distance between two sites under this metric.
    pub fn dist(self, a: Site, b: Site, d: usize) -> i32 {
        match self {
            Metric::Linf => linf_dist(a, b, d),
            Metric::L1 => l1_dist(a, b, d),
        }
    }
}

/// ℓ∞ distance between two sites.
pub fn linf_dist(a: Site, b: Site, d: usize) -> i32 {
    (0..d).map(|k| (a[k] - b[k]).abs()).max().unwrap_or(0)
}

/// ℓ¹ distance between two sites.
pub fn l1_dist(a: Site, b: Site, d: usize) -> i32 {
    (0..d).map(|k| (a[k] - b[k]).abs()).sum()
}

/// Squared Euclidean distance between two sites.
pub fn euclid_dist_sq(a: Site, b: Site, d: usize) -> i64 {
    (0..d)
        .map(|k| {
            let t = (a[k] - b[k]) as i64;
            t * t
        })
        .sum()
}

/// The centered box `V_N = [-N,N]^d ∩ Z^d` with a dense site index.
///
/// The index is the mixed-radix expansion with axis 0 fastest, a bijection
/// between sites and `0..(2N+1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeBox {
    n: i32,
    d: u8,
    site_count: u64,
}

impl LatticeBox {
    /// Build `V_N` in dimension `d` under the default site budget.
    pub fn new(n: i32, d: u8) -> Result<Self> {
        Self::with_budget(n, d, DEFAULT_SITE_BUDGET)
    }

    /// Build `V_N` with an explicit cap on `(2N+1)^d`.
    pub fn with_budget(n: i32, d: u8, budget: u64) -> Result<Self> {
        if !(1..=4).contains(&d) {
            return Err(Error::InvalidDimension(d));
        }
        if n < 1 {
            return Err(Error::InvalidParameter(format!("N must be >= 1, got {n}")));
        }
        let side = 2u128 * n as u128 + 1;
        let mut sites: u128 = 1;
        for _ in 0..d {
            sites = sites.checked_mul(side).ok_or(Error::SiteCountOverflow)?;
        }
        if sites > u64::MAX as u128 / 2 {
            return Err(Error::SiteCountOverflow);
        }
        if sites > budget as u128 {
            return Err(Error::BudgetExceeded { sites, budget });
        }
        Ok(Self {
            n,
            d,
            site_count: sites as u64,
        })
    }

    pub fn n(&self) -> i32 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d as usize
    }

    /// Side length `2N+1`.
    pub fn side(&self) -> i32 {
        2 * self.n + 1
    }

    /// Number of interior sites `(2N+1)^d`.
    pub fn site_count(&self) -> usize {
        self.site_count as usize
    }

    /// Whether a site lies in the box (trailing coordinates must be zero).
    pub fn contains(&self, x: Site) -> bool {
        let d = self.d();
        (0..d).all(|k| x[k].abs() <= self.n) && (d..4).all(|k| x[k] == 0)
    }

    /// Dense index of a site.
    pub fn index_of(&self, x: Site) -> Result<usize> {
        if !self.contains(x) {
            return Err(Error::SiteNotInBox(x));
        }
        let side = self.side() as usize;
        let mut idx = 0usize;
        for k in (0..self.d()).rev() {
            idx = idx * side + (x[k] + self.n) as usize;
        }
        Ok(idx)
    }

    /// Site at a dense index.
    pub fn site_at(&self, mut idx: usize) -> Site {
        debug_assert!(idx < self.site_count());
        let side = self.side() as usize;
        let mut x = [0i32; 4];
        for item in x.iter_mut().take(self.d()) {
            *item = (idx % side) as i32 - self.n;
            idx /= side;
        }
        x
    }

    /// Iterate all sites in index order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.site_count()).map(move |i| self.site_at(i))
    }

    /// ℓ∞ (equivalently ℓ¹) distance from an interior site to the complement
    /// `V_N^c`; the nearest exterior site differs along a single axis, so the
    /// two metrics agree.
    pub fn dist_to_complement(&self, x: Site) -> i32 {
        let norm = (0..self.d()).map(|k| x[k].abs()).max().unwrap_or(0);
        self.n + 1 - norm
    }

    /// The bulk `V_N^ℓ = {x : d(x, V_N^c) > ℓN}`.
    ///
    /// The strict inequality is the discretization that keeps `ℓ -> 0+`
    /// vacuous and `ℓ = 1` (just) pinning the center on small boxes.
    pub fn inner_region(&self, ell: f64) -> Result<Region> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::InvalidParameter(format!("ell must be > 0, got {ell}")));
        }
        let cut = ell * self.n as f64;
        let sites: Vec<Site> = self
            .sites()
            .filter(|&x| (self.dist_to_complement(x) as f64) > cut)
            .collect();
        if sites.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(Region::from_sites(*self, sites, false))
    }

    /// The full box as a region.
    pub fn full_region(&self) -> Region {
        Region::from_sites(*self, self.sites().collect(), false)
    }
}

/// An ordered set of sites tied to a parent box. `exterior` marks regions
/// that live (at least partly) outside `V_N`, e.g. double boundaries.
#[derive(Debug, Clone)]
pub struct Region {
    parent: LatticeBox,
    sites: Vec<Site>,
    exterior: bool,
}

impl Region {
    /// Build a region from a site list; sites are sorted lexicographically
    /// and deduplicated so that equality and membership are canonical.
    pub fn from_sites(parent: LatticeBox, mut sites: Vec<Site>, exterior: bool) -> Self {
        sites.sort_unstable();
        sites.dedup();
        if !exterior {
            debug_assert!(sites.iter().all(|&s| parent.contains(s)));
        }
        Self {
            parent,
            sites,
            exterior,
        }
    }

    pub fn parent(&self) -> &LatticeBox {
        &self.parent
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn is_exterior(&self) -> bool {
        self.exterior
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn contains(&self, x: Site) -> bool {
        self.sites.binary_search(&x).is_ok()
    }

    /// All sites outside this region within lattice distance 2 of it:
    /// `∂₂R = {y ∉ R : d(y, R) <= 2}`.
    ///
    /// Exterior shells are scanned over the bounding box of `R` enlarged by
    /// two layers, so the result may leave the parent box; it is flagged
    /// `exterior` when it does.
    pub fn double_boundary(&self, metric: Metric) -> Result<Region> {
        if self.sites.is_empty() {
            return Err(Error::EmptyRegion);
        }
        let d = self.parent.d();
        let mut lo = [0i32; 4];
        let mut hi = [0i32; 4];
        for k in 0..d {
            lo[k] = i32::MAX;
            hi[k] = i32::MIN;
        }
        for s in &self.sites {
            for k in 0..d {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        let offsets = shell_offsets(d, metric, 2);
        let mut out = Vec::new();
        let mut cursor = lo;
        for k in 0..d {
            cursor[k] -= 2;
        }
        'scan: loop {
            let y = cursor;
            if !self.contains(y) {
                // nearest-first offsets give a fast early exit for shell sites
                if offsets.iter().any(|&o| {
                    let mut c = y;
                    for k in 0..d {
                        c[k] += o[k];
                    }
                    self.contains(c)
                }) {
                    out.push(y);
                }
            }
            for k in 0..d {
                cursor[k] += 1;
                if cursor[k] <= hi[k] + 2 {
                    continue 'scan;
                }
                cursor[k] = lo[k] - 2;
            }
            break;
        }
        let exterior = out.iter().any(|&y| !self.parent.contains(y));
        Ok(Region::from_sites(self.parent, out, exterior))
    }
}

/// All nonzero offsets with metric norm `<= radius`, sorted by increasing
/// norm so membership probes can exit early.
fn shell_offsets(d: usize, metric: Metric, radius: i32) -> Vec<Site> {
    let mut out = Vec::new();
    let mut o = [0i32; 4];
    fn rec(k: usize, d: usize, radius: i32, metric: Metric, o: &mut Site, out: &mut Vec<Site>) {
        if k == d {
            let norm = match metric {
                Metric::Linf => (0..d).map(|k| o[k].abs()).max().unwrap_or(0),
                Metric::L1 => (0..d).map(|k| o[k].abs()).sum(),
            };
            if norm > 0 && norm <= radius {
                out.push(*o);
            }
            return;
        }
        for v in -radius..=radius {
            o[k] = v;
            rec(k + 1, d, radius, metric, o, out);
        }
        o[k] = 0;
    }
    rec(0, d, radius, metric, &mut o, &mut out);
    let norm = |s: &Site| match metric {
        Metric::Linf => (0..d).map(|k| s[k].abs()).max().unwrap_or(0),
        Metric::L1 => (0..d).map(|k| s[k].abs()).sum::<i32>(),
    };
    out.sort_by_key(|s| (norm(s), *s));
    out
}

/// Closed Euclidean ball `D(x, rho) ∩ V_N`. Returns the region and whether
/// any candidate site was clipped away by the box.
pub fn ball(bx: &LatticeBox, x: Site, rho: f64) -> Result<(Region, bool)> {
    if !bx.contains(x) {
        return Err(Error::SiteNotInBox(x));
    }
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {rho}")));
    }
    let r = rho.floor() as i32;
    let rho2 = rho * rho;
    let d = bx.d();
    let mut sites = Vec::new();
    let mut clipped = false;
    let mut o = [0i32; 4];
    fn rec(
        k: usize,
        d: usize,
        r: i32,
        rho2: f64,
        x: Site,
        bx: &LatticeBox,
        o: &mut Site,
        sites: &mut Vec<Site>,
        clipped: &mut bool,
    ) {
        if k == d {
            let n2: i64 = (0..d).map(|k| (o[k] as i64) * (o[k] as i64)).sum();
            if (n2 as f64) <= rho2 {
                let mut y = x;
                for k in 0..d {
                    y[k] += o[k];
                }
                if bx.contains(y) {
                    sites.push(y);
                } else {
                    *clipped = true;
                }
            }
            return;
        }
        for v in -r..=r {
            o[k] = v;
            rec(k + 1, d, r, rho2, x, bx, o, sites, clipped);
        }
        o[k] = 0;
    }
    rec(0, d, r, rho2, x, bx, &mut o, &mut sites, &mut clipped);
    Ok((Region::from_sites(*bx, sites, false), clipped))
}

/// Box `B(x, a) ∩ V_N` of nominal side `a` centered at `x`: all sites within
/// ℓ∞ distance `⌊a/2⌋`, so the realized side is the odd number `2⌊a/2⌋+1`.
pub fn box_region(bx: &LatticeBox, x: Site, a: f64) -> Result<(Region, bool)> {
    if !bx.contains(x) {
        return Err(Error::SiteNotInBox(x));
    }
    if a < 1.0 || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("side must be >= 1, got {a}")));
    }
    let h = (a / 2.0).floor() as i32;
    let d = bx.d();
    let mut sites = Vec::new();
    let mut clipped = false;
    let mut y = x;
    fn rec(
        k: usize,
        d: usize,
        h: i32,
        x: Site,
        bx: &LatticeBox,
        y: &mut Site,
        sites: &mut Vec<Site>,
        clipped: &mut bool,
    ) {
        if k == d {
            if bx.contains(*y) {
                sites.push(*y);
            } else {
                *clipped = true;
            }
            return;
        }
        for v in -h..=h {
            y[k] = x[k] + v;
            rec(k + 1, d, h, x, bx, y, sites, clipped);
        }
        y[k] = x[k];
    }
    rec(0, d, h, x, bx, &mut y, &mut sites, &mut clipped);
    Ok((Region::from_sites(*bx, sites, false), clipped))
}

/// One axis-aligned sub-box, stored by its most-negative corner and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubBox {
    pub corner: Site,
    pub side: i32,
}

impl SubBox {
    /// Center site; for even sides the lower-middle site.
    pub fn center(&self, d: usize) -> Site {
        let mut c = self.corner;
        for k in 0..d {
            c[k] += (self.side - 1) / 2;
        }
        c
    }

    pub fn contains(&self, y: Site, d: usize) -> bool {
        (0..d).all(|k| y[k] >= self.corner[k] && y[k] < self.corner[k] + self.side)
    }

    /// All sites of the sub-box as a region of `parent`.
    pub fn region(&self, parent: &LatticeBox) -> Region {
        let d = parent.d();
        let mut sites = Vec::with_capacity((self.side as usize).pow(d as u32));
        let mut y = self.corner;
        fn rec(k: usize, d: usize, b: &SubBox, y: &mut Site, sites: &mut Vec<Site>) {
            if k == d {
                sites.push(*y);
                return;
            }
            for v in 0..b.side {
                y[k] = b.corner[k] + v;
                rec(k + 1, d, b, y, sites);
            }
            y[k] = b.corner[k];
        }
        rec(0, d, self, &mut y, &mut sites);
        Region::from_sites(*parent, sites, false)
    }

    /// Smallest ℓ∞ distance between the site sets of two sub-boxes.
    pub fn linf_gap(&self, other: &SubBox, d: usize) -> i32 {
        (0..d)
            .map(|k| {
                let (a0, a1) = (self.corner[k], self.corner[k] + self.side - 1);
                let (b0, b1) = (other.corner[k], other.corner[k] + other.side - 1);
                if b0 > a1 {
                    b0 - a1
                } else if a0 > b1 {
                    a0 - b1
                } else {
                    0
                }
            })
            .max()
            .unwrap_or(0)
    }
}

/// A maximal grid of disjoint sub-boxes of side `⌊N^α⌋` placed with stride
/// `⌊N^α⌋ + 4` from an anchor corner, all inside `V_N`. Adjacent boxes end
/// up at ℓ∞ distance 5, so separating layers of thickness 2 fit between any
/// two of them and the 2-Markov property makes them conditionally
/// independent.
#[derive(Debug, Clone)]
pub struct SubBoxPartition {
    pub alpha: f64,
    pub anchor: Site,
    pub side: i32,
    pub stride: i32,
    pub boxes: Vec<SubBox>,
    /// Union of the members' double boundaries, clipped to `V_N` (sites
    /// outside the box are pinned to zero and generate nothing).
    pub sigma_scope: Region,
}

/// Place the sub-box grid; `anchor` is the corner of the `i = 0` member.
pub fn partition_subboxes(
    bx: &LatticeBox,
    alpha: f64,
    anchor: Site,
    metric: Metric,
) -> Result<SubBoxPartition> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    let side = (bx.n() as f64).powf(alpha).floor() as i64;
    if side < 1 {
        return Err(Error::InvalidParameter(format!(
            "floor(N^alpha) must be >= 1, got {side}"
        )));
    }
    if side > bx.side() as i64 {
        return Err(Error::EmptyPartition);
    }
    let side = side as i32;
    let stride = side + 4;
    let d = bx.d();
    let n = bx.n();
    // per-axis ranges of the grid index i such that the box fits in V_N
    let mut ranges = Vec::with_capacity(d);
    for k in 0..d {
        let lo = div_ceil(-n - anchor[k], stride);
        let hi = div_floor(n - side + 1 - anchor[k], stride);
        if lo > hi {
            return Err(Error::EmptyPartition);
        }
        ranges.push((lo, hi));
    }
    let mut boxes = Vec::new();
    let mut idx = vec![0i32; d];
    for k in 0..d {
        idx[k] = ranges[k].0;
    }
    'outer: loop {
        let mut corner = [0i32; 4];
        for k in 0..d {
            corner[k] = anchor[k] + idx[k] * stride;
        }
        boxes.push(SubBox { corner, side });
        for k in 0..d {
            idx[k] += 1;
            if idx[k] <= ranges[k].1 {
                continue 'outer;
            }
            idx[k] = ranges[k].0;
        }
        break;
    }
    let mut scope_sites = Vec::new();
    for b in &boxes {
        let shell = b.region(bx).double_boundary(metric)?;
        scope_sites.extend(shell.sites().iter().copied().filter(|&s| bx.contains(s)));
    }
    let sigma_scope = Region::from_sites(*bx, scope_sites, false);
    Ok(SubBoxPartition {
        alpha,
        anchor,
        side,
        stride,
        boxes,
        sigma_scope,
    })
}

fn div_floor(a: i32, b: i32) -> i32 {
    debug_assert!(b > 0);
    let q = a / b;
    if a % b < 0 {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i32, b: i32) -> i32 {
    -div_floor(-a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force distance from a site to the complement of the box,
    /// scanning every exterior site of the enlarged cube.
    fn dist_to_complement_scan(bx: &LatticeBox, x: Site, metric: Metric) -> i32 {
        let d = bx.d();
        let m = bx.n() + 3;
        let mut best = i32::MAX;
        let mut y = [0i32; 4];
        fn rec(
            k: usize,
            d: usize,
            m: i32,
            x: Site,
            bx: &LatticeBox,
            metric: Metric,
            y: &mut Site,
            best: &mut i32,
        ) {
            if k == d {
                if !bx.contains(*y) {
                    *best = (*best).min(metric.dist(x, *y, d));
                }
                return;
            }
            for v in -m..=m {
                y[k] = v;
                rec(k + 1, d, m, x, bx, metric, y, best);
            }
            y[k] = 0;
        }
        rec(0, d, m, x, bx, metric, &mut y, &mut best);
        best
    }

    #[test]
    fn box_site_counts() {
        assert_eq!(LatticeBox::new(1, 2).unwrap().site_count(), 9);
        assert_eq!(LatticeBox::new(2, 4).unwrap().site_count(), 625);
        assert_eq!(LatticeBox::new(8, 4).unwrap().site_count(), 83521);
    }

    #[test]
    fn budget_and_overflow_are_rejected() {
        assert!(matches!(
            LatticeBox::new(20, 4),
            Err(Error::BudgetExceeded { .. })
        ));
        assert!(matches!(
            LatticeBox::with_budget(i32::MAX / 2, 4, u64::MAX),
            Err(Error::SiteCountOverflow)
        ));
        assert!(LatticeBox::with_budget(20, 4, 3_000_000).is_ok());
    }

    #[test]
    fn index_bijection_small() {
        for (n, d) in [(3, 1), (2, 2), (1, 3), (1, 4)] {
            let bx = LatticeBox::new(n, d).unwrap();
            for i in 0..bx.site_count() {
                let s = bx.site_at(i);
                assert!(bx.contains(s));
                assert_eq!(bx.index_of(s).unwrap(), i);
            }
        }
    }

    #[test]
    fn every_site_has_small_linf_norm() {
        let bx = LatticeBox::new(2, 3).unwrap();
        for s in bx.sites() {
            assert!((0..3).all(|k| s[k].abs() <= 2));
            assert_eq!(s[3], 0);
        }
    }

    #[test]
    fn inner_region_boundary_case_pins_center() {
        // N=4, d=2, ell=1: only the center survives the strict cut.
        let bx = LatticeBox::new(4, 2).unwrap();
        let r = bx.inner_region(1.0).unwrap();
        assert_eq!(r.sites(), &[[0, 0, 0, 0]]);
    }

    #[test]
    fn inner_region_matches_distance_scan() {
        // N=8, d=4, ell=1/4: strict cut keeps exactly the linf ball of radius 6.
        let bx = LatticeBox::new(8, 4).unwrap();
        let r = bx.inner_region(0.25).unwrap();
        assert!(r
            .sites()
            .iter()
            .all(|s| (0..4).map(|k| s[k].abs()).max().unwrap() <= 6));
        assert_eq!(r.len(), 13usize.pow(4));
        // validate the analytic complement distance against the full scan on
        // a deterministic stride of sites (the full cross product is huge)
        for i in (0..bx.site_count()).step_by(997) {
            let x = bx.site_at(i);
            assert_eq!(
                bx.dist_to_complement(x),
                dist_to_complement_scan(&bx, x, Metric::Linf)
            );
            assert_eq!(
                bx.dist_to_complement(x),
                dist_to_complement_scan(&bx, x, Metric::L1)
            );
        }
        // and exhaustively on a small box in both metrics
        let small = LatticeBox::new(3, 2).unwrap();
        for x in small.sites() {
            assert_eq!(
                small.dist_to_complement(x),
                dist_to_complement_scan(&small, x, Metric::Linf)
            );
            assert_eq!(
                small.dist_to_complement(x),
                dist_to_complement_scan(&small, x, Metric::L1)
            );
        }
    }

    #[test]
    fn inner_region_vanishing_ell_is_vacuous() {
        let bx = LatticeBox::new(8, 4).unwrap();
        let r = bx.inner_region(1e-12).unwrap();
        assert_eq!(r.len(), bx.site_count());
    }

    #[test]
    fn inner_region_empty_is_distinct() {
        let bx = LatticeBox::new(4, 2).unwrap();
        assert!(matches!(bx.inner_region(1.5), Err(Error::EmptyRegion)));
    }

    #[test]
    fn double_boundary_of_single_site() {
        // Degenerate region {0} in d=2: the <=2 shell around one site.
        let bx = LatticeBox::new(4, 2).unwrap();
        let r = Region::from_sites(bx, vec![[0, 0, 0, 0]], false);
        let shell = r.double_boundary(Metric::Linf).unwrap();
        let mut expected = Vec::new();
        for x in -2..=2 {
            for y in -2..=2 {
                if (x, y) != (0, 0) {
                    expected.push([x, y, 0, 0]);
                }
            }
        }
        expected.sort_unstable();
        assert_eq!(shell.sites(), &expected[..]);

        let shell1 = r.double_boundary(Metric::L1).unwrap();
        assert_eq!(shell1.len(), 12); // 4 at distance 1, 8 at distance 2
    }

    #[test]
    fn double_boundary_of_full_box_is_disjoint_exterior_shell() {
        let bx = LatticeBox::new(2, 2).unwrap();
        let full = bx.full_region();
        let shell = full.double_boundary(Metric::Linf).unwrap();
        assert!(shell.is_exterior());
        assert!(!shell.is_empty());
        for s in shell.sites() {
            assert!(!bx.contains(*s));
            let norm = s[0].abs().max(s[1].abs());
            assert!(norm >= 3 && norm <= 4);
        }
        assert_eq!(shell.len(), 9 * 9 - 5 * 5);
    }

    #[test]
    fn ball_examples() {
        // D(x,1) in d=4: the site plus its 8 nearest neighbors.
        let bx = LatticeBox::new(2, 4).unwrap();
        let (b, clipped) = ball(&bx, [0, 0, 0, 0], 1.0).unwrap();
        assert!(!clipped);
        assert_eq!(b.len(), 9);

        // D(0, 2.5) in d=2: enumerate x^2+y^2 <= 6.25.
        let bx2 = LatticeBox::new(4, 2).unwrap();
        let (b2, _) = ball(&bx2, [0, 0, 0, 0], 2.5).unwrap();
        let brute = bx2
            .sites()
            .filter(|&y| euclid_dist_sq([0, 0, 0, 0], y, 2) as f64 <= 6.25)
            .count();
        assert_eq!(b2.len(), brute);
        assert_eq!(b2.len(), 21);
    }

    #[test]
    fn box_region_examples() {
        let bx = LatticeBox::new(4, 2).unwrap();
        let (b, clipped) = box_region(&bx, [0, 0, 0, 0], 2.0).unwrap();
        assert!(!clipped);
        assert_eq!(b.len(), 9); // 3x3 block
        let (b5, clipped5) = box_region(&bx, [3, 3, 0, 0], 5.0).unwrap();
        assert!(clipped5);
        assert_eq!(b5.len(), 4 * 4); // clipped at the corner
    }

    /// Exhaustive placement oracle: count grid boxes of the given side and
    /// stride (anchored at `anchor`) that fit inside the box.
    fn placement_oracle(bx: &LatticeBox, side: i32, stride: i32, anchor: Site) -> usize {
        let d = bx.d();
        let mut per_axis = Vec::new();
        for k in 0..d {
            let mut cnt = 0;
            let mut c = anchor[k];
            while c - stride >= -bx.n() {
                c -= stride;
            }
            while c + side - 1 <= bx.n() {
                if c >= -bx.n() {
                    cnt += 1;
                }
                c += stride;
            }
            per_axis.push(cnt);
        }
        per_axis.iter().product()
    }

    #[test]
    fn partition_grid_count_matches_placement_oracle() {
        // N=16, d=2, alpha=0.5: side 4, stride 8.
        let bx = LatticeBox::new(16, 2).unwrap();
        let anchor = [-16, -16, 0, 0];
        let p = partition_subboxes(&bx, 0.5, anchor, Metric::Linf).unwrap();
        assert_eq!(p.side, 4);
        assert_eq!(p.stride, 8);
        let expected = placement_oracle(&bx, 4, 8, anchor);
        assert_eq!(p.boxes.len(), expected);
        assert_eq!(p.boxes.len(), 16);
    }

    #[test]
    fn partition_too_large_side_is_empty() {
        let bx = LatticeBox::new(2, 2).unwrap();
        // force a side larger than 2N+1 via alpha > 1 (allowed by the API)
        assert!(matches!(
            partition_subboxes(&bx, 3.0, [-2, -2, 0, 0], Metric::Linf),
            Err(Error::EmptyPartition)
        ));
    }

    #[test]
    fn partition_gap_invariant() {
        let bx = LatticeBox::new(16, 3).unwrap();
        let p = partition_subboxes(&bx, 0.4, [-16, -16, -16, 0], Metric::Linf).unwrap();
        assert!(p.boxes.len() > 1);
        for (i, a) in p.boxes.iter().enumerate() {
            for b in &p.boxes[i + 1..] {
                assert!(a.linf_gap(b, 3) >= 3);
            }
        }
        for b in &p.boxes {
            for s in b.region(&bx).sites() {
                assert!(bx.contains(*s));
            }
        }
        assert!(!p.sigma_scope.is_empty());
    }

    #[test]
    fn subbox_region_and_center() {
        let bx = LatticeBox::new(5, 2).unwrap();
        let b = SubBox {
            corner: [-1, 0, 0, 0],
            side: 3,
        };
        assert_eq!(b.center(2), [0, 1, 0, 0]);
        assert_eq!(b.region(&bx).len(), 9);
        let even = SubBox {
            corner: [0, 0, 0, 0],
            side: 2,
        };
        assert_eq!(even.center(2), [0, 0, 0, 0]);
    }

    proptest! {
        #[test]
        fn index_roundtrip(n in 1i32..6, d in 1u8..5, salt in 0u64..1000) {
            let bx = LatticeBox::new(n, d).unwrap();
            let idx = (salt as usize * 7919) % bx.site_count();
            let s = bx.site_at(idx);
            prop_assert_eq!(bx.index_of(s).unwrap(), idx);
        }

        #[test]
        fn inner_region_monotone_in_ell(n in 2i32..9, ell1 in 0.05f64..0.9, ell2 in 0.05f64..0.9) {
            let (lo, hi) = if ell1 <= ell2 { (ell1, ell2) } else { (ell2, ell1) };
            let bx = LatticeBox::new(n, 2).unwrap();
            let big = bx.inner_region(lo).unwrap();
            match bx.inner_region(hi) {
                Ok(small) => {
                    for s in small.sites() {
                        prop_assert!(big.contains(*s));
                    }
                }
                Err(Error::EmptyRegion) => {}
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            }
        }

        #[test]
        fn double_boundary_disjoint_and_within_reach(
            n in 2i32..6,
            cx in -2i32..3,
            cy in -2i32..3,
            side in 1i32..4,
            linf in proptest::bool::ANY,
        ) {
            let bx = LatticeBox::new(n, 2).unwrap();
            let b = SubBox { corner: [cx, cy, 0, 0], side };
            prop_assume!(cx + side - 1 <= n && cy + side - 1 <= n);
            let metric = if linf { Metric::Linf } else { Metric::L1 };
            let r = b.region(&bx);
            let shell = r.double_boundary(metric).unwrap();
            for y in shell.sites() {
                prop_assert!(!r.contains(*y));
                let dist = r.sites().iter().map(|&s| metric.dist(s, *y, 2)).min().unwrap();
                prop_assert!(dist >= 1 && dist <= 2);
            }
            // completeness: every site at distance <= 2 is present
            for y in bx.sites() {
                if !r.contains(y) {
                    let dist = r.sites().iter().map(|&s| metric.dist(s, y, 2)).min().unwrap();
                    if dist <= 2 {
                        prop_assert!(shell.contains(y));
                    }
                }
            }
        }
    }
}
