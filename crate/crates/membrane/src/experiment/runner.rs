//! Experiment runners: validation suite, covariance diagnostics, sampling,
//! and the high-point observables with their exponent fits.
//!
//! Replicas run on a bounded worker pool with seeds derived per
//! (command, N, replica), so results are bit-identical regardless of
//! thread scheduling.

use rayon::prelude::*;

use super::report::{model_name, FitRow, Report, ReportRow, SCHEMA_VERSION};
use super::{ExperimentConfig, SamplerChoice};
use crate::gaussian::{sample_exact, sample_exact_cg, sample_gbar, FieldSample};
use crate::lattice::{LatticeBox, Region, Site};
use crate::operators::{assemble_precision, Model, PrecisionMatrix};
use crate::solver::{factorize_with_budget, green_column_cg, Factorization};
use crate::statistics::{
    biggest_high_square, cluster_count, exponent_fit, high_point_count, max_in_region, pair_count,
};
use crate::theory::{self, LevelThreshold};
use crate::{rng, Error, Result};

// command tags for seed derivation
const TAG_EXPONENTS: u64 = 1;
const TAG_CLUSTERS: u64 = 2;
const TAG_PAIRS: u64 = 3;
const TAG_SQUARE: u64 = 4;
const TAG_MAX: u64 = 5;
const TAG_SAMPLE: u64 = 6;

/// How replicas at one box size get sampled.
enum Plan {
    Factor {
        q: PrecisionMatrix,
        f: Box<Factorization>,
    },
    IterativeExact {
        q: PrecisionMatrix,
        tol: f64,
        precondition: bool,
    },
    Gbar {
        tol: f64,
    },
}

impl Plan {
    fn sample(&self, bx: &LatticeBox, seed: u64) -> Result<FieldSample> {
        match self {
            Plan::Factor { q, f } => sample_exact(q, f, seed),
            Plan::IterativeExact {
                q,
                tol,
                precondition,
            } => sample_exact_cg(q, seed, *tol, *precondition),
            Plan::Gbar { tol } => sample_gbar(bx, seed, *tol),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Plan::Factor { .. } | Plan::IterativeExact { .. } => "exact",
            Plan::Gbar { .. } => "gbar",
        }
    }
}

fn build_box(cfg: &ExperimentConfig, n: u32) -> Result<LatticeBox> {
    LatticeBox::with_budget(n as i32, cfg.d, cfg.site_budget)
}

fn make_plan(cfg: &ExperimentConfig, bx: &LatticeBox) -> Result<Plan> {
    let assemble = || assemble_precision(bx, cfg.model, cfg.convention);
    let factor_plan = |q: PrecisionMatrix| -> Result<Plan> {
        let f = factorize_with_budget(&q, crate::solver::DEFAULT_FACTOR_BUDGET)?;
        Ok(Plan::Factor { q, f: Box::new(f) })
    };
    match cfg.sampler {
        SamplerChoice::Gbar => {
            if cfg.model != Model::Membrane {
                return Err(Error::InvalidParameter(
                    "the gbar sampler is a membrane-model proxy; use the exact sampler for the dgff"
                        .into(),
                ));
            }
            Ok(Plan::Gbar {
                tol: cfg.sample_tol,
            })
        }
        SamplerChoice::Exact => {
            let q = assemble()?;
            let predicted = crate::solver::predict_factor(&q);
            if predicted.stats().flops <= cfg.exact_factor_flops {
                factor_plan(q)
            } else if cfg.model == Model::Membrane {
                let precondition = bx.site_count() > 150_000;
                Ok(Plan::IterativeExact {
                    q,
                    tol: cfg.sample_tol,
                    precondition,
                })
            } else {
                // no iterative exact route for the dgff; pay for the factor
                factor_plan(q)
            }
        }
        SamplerChoice::Auto => {
            let q = assemble()?;
            let predicted = crate::solver::predict_factor(&q);
            if predicted.stats().flops <= cfg.exact_factor_flops {
                factor_plan(q)
            } else if cfg.model == Model::Membrane {
                Ok(Plan::Gbar {
                    tol: cfg.sample_tol,
                })
            } else {
                factor_plan(q)
            }
        }
    }
}

/// Run a closure over all replicas in parallel, collecting in replica order.
fn replicate<T: Send>(
    count: u32,
    f: impl Fn(u32) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if count == 0 {
        eprintln!("warning: zero replicas requested; emitting an empty report");
    }
    (0..count)
        .into_par_iter()
        .map(f)
        .collect::<std::result::Result<Vec<T>, Error>>()
}

fn replica_seed(cfg: &ExperimentConfig, tag: u64, n: u32, replica: u32) -> u64 {
    rng::derive(cfg.seed, &[tag, n as u64, replica as u64])
}

fn ratio_of(count: u64, n: u32) -> Option<f64> {
    if count > 0 {
        Some((count as f64).ln() / (n as f64).ln())
    } else {
        None
    }
}

/// Ordinary least squares of y against x (not log-log).
fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    ((slope), (sy - slope * sx) / m)
}

fn predicted_dim(model: Model, eta: f64) -> f64 {
    match model {
        Model::Membrane => theory::high_point_dim(eta),
        Model::Dgff => theory::dgff_high_point_dim(eta),
    }
}

fn push_fit(
    report: &mut Report,
    cfg: &ExperimentConfig,
    fp: &str,
    kind: &str,
    eta: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    points: &[(f64, f64)],
    predicted: Option<f64>,
) {
    if let Ok(fit) = exponent_fit(points) {
        let max_x = fit
            .points
            .iter()
            .map(|p| p.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let last: Vec<f64> = fit
            .points
            .iter()
            .filter(|p| p.0 == max_x)
            .map(|p| p.1 / p.0)
            .collect();
        let ratio_last = if last.is_empty() {
            None
        } else {
            Some(last.iter().sum::<f64>() / last.len() as f64)
        };
        report.fits.push(FitRow {
            schema: SCHEMA_VERSION,
            code: super::report::code_version(),
            config: fp.to_string(),
            kind: kind.to_string(),
            model: model_name(cfg.model).to_string(),
            d: cfg.d,
            eta,
            alpha,
            beta,
            slope: fit.slope,
            intercept: fit.intercept,
            residual_norm: fit.residual_norm,
            half_width: fit.half_width,
            points: fit.points.len() as u32,
            dropped: fit.dropped as u32,
            predicted,
            ratio_last,
        });
    }
}

/// High-point counts per (N, η, replica) with a dimension fit per η.
pub fn run_exponents(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let mut report = Report::default();
    let mut fit_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cfg.eta_list.len()];
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let plan = make_plan(cfg, &bx)?;
        eprintln!("exponents: N={n} sites={} sampler={}", bx.site_count(), plan.name());
        let per: Vec<(u32, u64, Vec<u64>)> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_EXPONENTS, n, r);
            let phi = plan.sample(&bx, seed)?;
            let counts = cfg
                .eta_list
                .iter()
                .map(|&eta| {
                    let thr = LevelThreshold::new(cfg.model, cfg.d as usize, eta, n);
                    high_point_count(&phi, &thr, &region) as u64
                })
                .collect();
            Ok((r, seed, counts))
        })?;
        for (r, seed, counts) in per {
            for (ei, &eta) in cfg.eta_list.iter().enumerate() {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, eta, n);
                let count = counts[ei];
                let mut row = ReportRow::new(&fp, "high_points", cfg.model, cfg.d, n, cfg.ell);
                row.eta = Some(eta);
                row.replica = Some(r);
                row.seed = Some(seed);
                row.sampler = Some(plan.name().to_string());
                row.threshold = Some(thr.value);
                row.count = Some(count);
                row.ratio = ratio_of(count, n);
                row.predicted = Some(predicted_dim(cfg.model, eta));
                report.rows.push(row);
                if count > 0 {
                    fit_points[ei].push((n as f64, count as f64));
                }
            }
        }
    }
    for (ei, &eta) in cfg.eta_list.iter().enumerate() {
        push_fit(
            &mut report,
            cfg,
            &fp,
            "high_points",
            Some(eta),
            None,
            None,
            &fit_points[ei],
            Some(predicted_dim(cfg.model, eta)),
        );
    }
    Ok(report)
}

/// Field maxima per (N, replica): `max φ / log N` approaches the growth
/// rate from above at desk scales.
pub fn run_max(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let rate = theory::max_rate_for(cfg.model, cfg.d as usize);
    let mut report = Report::default();
    let mut points: Vec<(f64, f64)> = Vec::new();
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let plan = make_plan(cfg, &bx)?;
        eprintln!("max: N={n} sampler={}", plan.name());
        let per: Vec<(u32, u64, Site, f64)> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_MAX, n, r);
            let phi = plan.sample(&bx, seed)?;
            let (site, value) = max_in_region(&phi, &region)?;
            Ok((r, seed, site, value))
        })?;
        let mut mean = 0.0;
        for (r, seed, site, value) in &per {
            let mut row = ReportRow::new(&fp, "max", cfg.model, cfg.d, n, cfg.ell);
            row.replica = Some(*r);
            row.seed = Some(*seed);
            row.sampler = Some(plan.name().to_string());
            row.value = Some(*value);
            row.ratio = Some(value / (n as f64).ln());
            row.predicted = Some(rate);
            row.site = Some(site_string(site, cfg.d as usize));
            report.rows.push(row);
            mean += value;
        }
        mean /= per.len() as f64;
        points.push(((n as f64).ln(), mean));
    }
    if points.len() >= 2 {
        let (slope, intercept) = linear_fit(&points);
        report.fits.push(FitRow {
            schema: SCHEMA_VERSION,
            code: super::report::code_version(),
            config: fp.clone(),
            kind: "max".into(),
            model: model_name(cfg.model).to_string(),
            d: cfg.d,
            eta: None,
            alpha: None,
            beta: None,
            slope,
            intercept,
            residual_norm: 0.0,
            half_width: f64::NAN,
            points: points.len() as u32,
            dropped: 0,
            predicted: Some(rate),
            ratio_last: points.last().map(|&(x, y)| y / x),
        });
    }
    Ok(report)
}

fn site_string(s: &Site, d: usize) -> String {
    (0..d)
        .map(|k| s[k].to_string())
        .collect::<Vec<_>>()
        .join(":")
}

/// Deterministic grid of conditioning centers inside the bulk region.
fn center_grid(bx: &LatticeBox, region: &Region) -> Vec<Site> {
    let stride = (bx.n() / 4).max(1);
    region
        .sites()
        .iter()
        .copied()
        .filter(|s| (0..bx.d()).all(|k| s[k] % stride == 0))
        .collect()
}

/// Cluster counts around centers, unconditional (fixed center) and
/// conditioned on the center being high.
pub fn run_clusters(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let mut report = Report::default();
    let n_levels = cfg.alpha_list.len() * cfg.beta_list.len();
    let mut cond_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_levels];
    let mut uncond_points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_levels];
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let centers = center_grid(&bx, &region);
        let plan = make_plan(cfg, &bx)?;
        eprintln!(
            "clusters: N={n} sampler={} centers={}",
            plan.name(),
            centers.len()
        );
        type Rec = (u32, u64, Vec<(u64, u64, f64)>);
        let per: Vec<Rec> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_CLUSTERS, n, r);
            let phi = plan.sample(&bx, seed)?;
            let mut out = Vec::with_capacity(n_levels);
            for &alpha in &cfg.alpha_list {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, alpha, n);
                for &beta in &cfg.beta_list {
                    // unconditional count at the origin
                    let uncond = cluster_count(&phi, &thr, &region, [0, 0, 0, 0], beta)?;
                    // conditioned on the center being an alpha-high point
                    let mut hits = 0u64;
                    let mut log_sum = 0.0f64;
                    for &c in &centers {
                        if phi.value_at(c)? >= thr.value {
                            let cnt = cluster_count(&phi, &thr, &region, c, beta)?;
                            if cnt > 0 {
                                hits += 1;
                                log_sum += (cnt as f64).ln();
                            }
                        }
                    }
                    let mean_log = if hits > 0 {
                        log_sum / hits as f64
                    } else {
                        f64::NAN
                    };
                    out.push((uncond, hits, mean_log));
                }
            }
            Ok((r, seed, out))
        })?;
        for (r, seed, recs) in per {
            let mut li = 0usize;
            for &alpha in &cfg.alpha_list {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, alpha, n);
                for &beta in &cfg.beta_list {
                    let (uncond, hits, mean_log) = recs[li];
                    let mut row = ReportRow::new(&fp, "cluster", cfg.model, cfg.d, n, cfg.ell);
                    row.alpha = Some(alpha);
                    row.beta = Some(beta);
                    row.replica = Some(r);
                    row.seed = Some(seed);
                    row.sampler = Some(plan.name().to_string());
                    row.threshold = Some(thr.value);
                    row.count = Some(uncond);
                    row.ratio = ratio_of(uncond, n);
                    row.predicted = if alpha < beta {
                        Some(theory::cluster_dim(alpha, beta))
                    } else {
                        None
                    };
                    row.site = Some(site_string(&[0, 0, 0, 0], cfg.d as usize));
                    report.rows.push(row);
                    if uncond > 0 {
                        uncond_points[li].push((n as f64, uncond as f64));
                    }

                    let mut row = ReportRow::new(&fp, "cluster_cond", cfg.model, cfg.d, n, cfg.ell);
                    row.alpha = Some(alpha);
                    row.beta = Some(beta);
                    row.replica = Some(r);
                    row.seed = Some(seed);
                    row.sampler = Some(plan.name().to_string());
                    row.threshold = Some(thr.value);
                    row.count = Some(hits);
                    if hits > 0 {
                        row.value = Some(mean_log);
                        row.ratio = Some(mean_log / (n as f64).ln());
                        cond_points[li].push((n as f64, mean_log.exp()));
                    }
                    row.predicted = Some(theory::cluster_dim_conditional(alpha, beta));
                    report.rows.push(row);
                    li += 1;
                }
            }
        }
    }
    let mut li = 0usize;
    for &alpha in &cfg.alpha_list {
        for &beta in &cfg.beta_list {
            push_fit(
                &mut report,
                cfg,
                &fp,
                "cluster_cond",
                None,
                Some(alpha),
                Some(beta),
                &cond_points[li],
                Some(theory::cluster_dim_conditional(alpha, beta)),
            );
            push_fit(
                &mut report,
                cfg,
                &fp,
                "cluster",
                None,
                Some(alpha),
                Some(beta),
                &uncond_points[li],
                if alpha < beta {
                    Some(theory::cluster_dim(alpha, beta))
                } else {
                    None
                },
            );
            li += 1;
        }
    }
    Ok(report)
}

/// Ordered pair counts within distance `N^β`; diagonal pairs recorded both
/// included and excluded.
pub fn run_pairs(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let mut report = Report::default();
    let n_levels = cfg.alpha_list.len() * cfg.beta_list.len();
    let mut points_diag: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_levels];
    let mut points_nodiag: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_levels];
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let plan = make_plan(cfg, &bx)?;
        eprintln!("pairs: N={n} sampler={}", plan.name());
        type Rec = (u32, u64, Vec<(u64, u64)>);
        let per: Vec<Rec> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_PAIRS, n, r);
            let phi = plan.sample(&bx, seed)?;
            let mut out = Vec::with_capacity(n_levels);
            for &alpha in &cfg.alpha_list {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, alpha, n);
                for &beta in &cfg.beta_list {
                    let with = pair_count(&phi, &thr, &region, beta, true);
                    let without = pair_count(&phi, &thr, &region, beta, false);
                    out.push((with, without));
                }
            }
            Ok((r, seed, out))
        })?;
        for (r, seed, recs) in per {
            let mut li = 0usize;
            for &alpha in &cfg.alpha_list {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, alpha, n);
                for &beta in &cfg.beta_list {
                    let (with, without) = recs[li];
                    for (kind, count, store) in [
                        ("pairs", with, &mut points_diag[li]),
                        ("pairs_nodiag", without, &mut points_nodiag[li]),
                    ] {
                        let mut row = ReportRow::new(&fp, kind, cfg.model, cfg.d, n, cfg.ell);
                        row.alpha = Some(alpha);
                        row.beta = Some(beta);
                        row.replica = Some(r);
                        row.seed = Some(seed);
                        row.sampler = Some(plan.name().to_string());
                        row.threshold = Some(thr.value);
                        row.count = Some(count);
                        row.ratio = ratio_of(count, n);
                        row.predicted = Some(theory::rho(alpha, beta));
                        report.rows.push(row);
                        if count > 0 {
                            store.push((n as f64, count as f64));
                        }
                    }
                    li += 1;
                }
            }
        }
    }
    let mut li = 0usize;
    for &alpha in &cfg.alpha_list {
        for &beta in &cfg.beta_list {
            for (kind, pts) in [
                ("pairs", &points_diag[li]),
                ("pairs_nodiag", &points_nodiag[li]),
            ] {
                push_fit(
                    &mut report,
                    cfg,
                    &fp,
                    kind,
                    None,
                    Some(alpha),
                    Some(beta),
                    pts,
                    Some(theory::rho(alpha, beta)),
                );
            }
            li += 1;
        }
    }
    Ok(report)
}

/// Biggest high square per (N, η, replica).
pub fn run_square(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let mut report = Report::default();
    let mut points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cfg.eta_list.len()];
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let plan = make_plan(cfg, &bx)?;
        eprintln!("square: N={n} sampler={}", plan.name());
        let per: Vec<(u32, u64, Vec<u32>)> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_SQUARE, n, r);
            let phi = plan.sample(&bx, seed)?;
            let sides = cfg
                .eta_list
                .iter()
                .map(|&eta| {
                    let thr = LevelThreshold::new(cfg.model, cfg.d as usize, eta, n);
                    biggest_high_square(&phi, &thr, &region)
                })
                .collect();
            Ok((r, seed, sides))
        })?;
        for (r, seed, sides) in per {
            for (ei, &eta) in cfg.eta_list.iter().enumerate() {
                let thr = LevelThreshold::new(cfg.model, cfg.d as usize, eta, n);
                let side = sides[ei];
                let mut row = ReportRow::new(&fp, "square", cfg.model, cfg.d, n, cfg.ell);
                row.eta = Some(eta);
                row.replica = Some(r);
                row.seed = Some(seed);
                row.sampler = Some(plan.name().to_string());
                row.threshold = Some(thr.value);
                row.count = Some(side as u64);
                row.value = Some(side as f64);
                row.ratio = ratio_of(side as u64, n);
                row.predicted = Some(theory::square_exp(eta));
                report.rows.push(row);
                if side > 0 {
                    points[ei].push((n as f64, side as f64));
                }
            }
        }
    }
    for (ei, &eta) in cfg.eta_list.iter().enumerate() {
        push_fit(
            &mut report,
            cfg,
            &fp,
            "square",
            Some(eta),
            None,
            None,
            &points[ei],
            Some(theory::square_exp(eta)),
        );
    }
    Ok(report)
}

/// Stratified bulk partners of the origin: axis and diagonal directions,
/// dyadic step lengths, all within Euclidean distance `ℓN` and the bulk.
fn stratified_partners(bx: &LatticeBox, region: &Region, ell: f64) -> Vec<Site> {
    let d = bx.d();
    let mut dirs: Vec<Site> = Vec::new();
    for k in 0..d {
        let mut e = [0i32; 4];
        e[k] = 1;
        dirs.push(e);
    }
    for i in 0..d {
        for j in i + 1..d {
            let mut e = [0i32; 4];
            e[i] = 1;
            e[j] = 1;
            dirs.push(e);
        }
    }
    if d == 4 {
        dirs.push([1, 1, 1, 1]);
    }
    let lim = ell * bx.n() as f64;
    let mut out = Vec::new();
    for dir in dirs {
        let mut step = 1i32;
        loop {
            let mut y = [0i32; 4];
            for k in 0..d {
                y[k] = dir[k] * step;
            }
            let norm = (crate::lattice::euclid_dist_sq([0, 0, 0, 0], y, d) as f64).sqrt();
            if norm > lim || !region.contains(y) {
                break;
            }
            out.push(y);
            step *= 2;
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Deterministic covariance diagnostics: center variances, the stratified
/// covariance profile against `g(log N − log|x−y|)`, and the `G` vs `Ḡ`
/// bulk gap.
pub fn run_green(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let fp = cfg.fingerprint();
    let cache = cfg.cache();
    let g = theory::g_for(cfg.model);
    let mut report = Report::default();
    let mut var_points: Vec<(f64, f64)> = Vec::new();
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let region = bx.inner_region(cfg.ell)?;
        let q = assemble_precision(&bx, cfg.model, cfg.convention)?;
        let precondition = cfg.model == Model::Membrane && bx.site_count() > 150_000;
        let origin = [0, 0, 0, 0];
        eprintln!("green: N={n} sites={}", bx.site_count());
        let col = green_column_cg(&q, origin, cfg.green_tol, &cache, precondition)?;
        let var = col.values[bx.index_of(origin)?];
        let mut row = ReportRow::new(&fp, "variance", cfg.model, cfg.d, n, cfg.ell);
        row.value = Some(var);
        row.predicted = Some(g * (n as f64).ln());
        row.site = Some(site_string(&origin, cfg.d as usize));
        report.rows.push(row);
        var_points.push(((n as f64).ln(), var));

        let partners = stratified_partners(&bx, &region, cfg.ell);
        let mut max_gap = 0.0f64;
        for &y in &partners {
            let dist = (crate::lattice::euclid_dist_sq(origin, y, cfg.d as usize) as f64).sqrt();
            let cov = col.values[bx.index_of(y)?];
            let mut row = ReportRow::new(&fp, "covariance", cfg.model, cfg.d, n, cfg.ell);
            row.value = Some(cov);
            row.dist = Some(dist);
            row.predicted = Some(g * ((n as f64).ln() - dist.ln()));
            row.site = Some(site_string(&y, cfg.d as usize));
            report.rows.push(row);

            if cfg.model == Model::Membrane {
                let gb = crate::solver::gbar(&bx, origin, y, &cache)?;
                let gap = (cov - gb).abs();
                max_gap = max_gap.max(gap);
                let mut row = ReportRow::new(&fp, "gbar_gap", cfg.model, cfg.d, n, cfg.ell);
                row.value = Some(gap);
                row.dist = Some(dist);
                row.site = Some(site_string(&y, cfg.d as usize));
                report.rows.push(row);
            }
        }
        if cfg.model == Model::Membrane {
            // include the variance itself in the gap scan
            let gb = crate::solver::gbar(&bx, origin, origin, &cache)?;
            max_gap = max_gap.max((var - gb).abs());
            let mut row = ReportRow::new(&fp, "gbar_gap_max", cfg.model, cfg.d, n, cfg.ell);
            row.value = Some(max_gap);
            report.rows.push(row);
        }
    }
    if var_points.len() >= 2 {
        let (slope, intercept) = linear_fit(&var_points);
        report.fits.push(FitRow {
            schema: SCHEMA_VERSION,
            code: super::report::code_version(),
            config: fp.clone(),
            kind: "variance".into(),
            model: model_name(cfg.model).to_string(),
            d: cfg.d,
            eta: None,
            alpha: None,
            beta: None,
            slope,
            intercept,
            residual_norm: 0.0,
            half_width: f64::NAN,
            points: var_points.len() as u32,
            dropped: 0,
            predicted: Some(g),
            ratio_last: None,
        });
    }
    Ok(report)
}

/// Draw replicas and persist each sample to `<out>/sample_*.bin`.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::InvalidParameter("sample requires an output directory".into()))?;
    std::fs::create_dir_all(&out)?;
    let fp = cfg.fingerprint();
    let mut report = Report::default();
    for &n in &cfg.n_list {
        let bx = build_box(cfg, n)?;
        let plan = make_plan(cfg, &bx)?;
        eprintln!("sample: N={n} sampler={}", plan.name());
        let per: Vec<(u32, u64, f64)> = replicate(cfg.replicas, |r| {
            let seed = replica_seed(cfg, TAG_SAMPLE, n, r);
            let phi = plan.sample(&bx, seed)?;
            let name = format!(
                "sample_{}_d{}_N{}_r{:04}.bin",
                model_name(cfg.model),
                cfg.d,
                n,
                r
            );
            crate::gaussian::write_sample(&phi, &out.join(name))?;
            Ok((r, seed, phi.value_at([0, 0, 0, 0])?))
        })?;
        for (r, seed, center) in per {
            let mut row = ReportRow::new(&fp, "sample", cfg.model, cfg.d, n, cfg.ell);
            row.replica = Some(r);
            row.seed = Some(seed);
            row.sampler = Some(plan.name().to_string());
            row.value = Some(center);
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// One validation check: name, verdict, and the measured quantity.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match body() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check {
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

/// The invariant suite: bound and identity checks at small sizes, reported
/// per check without aborting on individual failures.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let cache = cfg.cache();
    let mut checks = Vec::new();

    checks.push(check("stencil_identities", || {
        let d = cfg.d as usize;
        let lap = crate::operators::laplacian_stencil(d, cfg.convention);
        let bil = crate::operators::bilaplacian_stencil(d, cfg.convention);
        let zero_sum = lap.coefficient_sum() == num_rational::Ratio::from_integer(0)
            && bil.coefficient_sum() == num_rational::Ratio::from_integer(0);
        let conv = lap.convolve(&lap) == bil;
        Ok((
            zero_sum && conv,
            format!("zero sums {zero_sum}, self-convolution {conv}"),
        ))
    }));

    checks.push(check("markov_submatrix", || {
        let bx = LatticeBox::new(4, 2)?;
        let q = assemble_precision(&bx, Model::Membrane, cfg.convention)?;
        let b = crate::lattice::SubBox {
            corner: [-2, -1, 0, 0],
            side: 3,
        };
        let region = b.region(&bx);
        let sub = q.submatrix(&region);
        let own = crate::operators::assemble_region_precision(&region, Model::Membrane, cfg.convention)?;
        Ok((sub == own, "entry-exact equality".into()))
    }));

    checks.push(check("factor_reconstruction", || {
        let bx = LatticeBox::new(3, 2)?;
        let q = assemble_precision(&bx, cfg.model, cfg.convention)?;
        let f = crate::solver::factorize(&q)?;
        // probe residual ‖Qv − PᵀLLᵀPv‖∞ / ‖Qv‖∞ over seeded probes
        let mut worst = 0.0f64;
        for probe in 0..4u64 {
            let v = rng::normal_vector(rng::derive(cfg.seed, &[90, probe]), q.n_sites());
            let qv = {
                let mut out = vec![0.0; q.n_sites()];
                q.matrix().matvec(&v, &mut out);
                out
            };
            let rec = f.apply_reconstruction(&v);
            let denom = qv.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let diff = qv
                .iter()
                .zip(&rec)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / denom);
        }
        Ok((worst <= 1e-10, format!("probe residual {worst:.3e}")))
    }));

    checks.push(check("green_residual_and_symmetry", || {
        let bx = LatticeBox::new(4, 2)?;
        let q = assemble_precision(&bx, cfg.model, cfg.convention)?;
        let x = [0, 0, 0, 0];
        let y = [1, -2, 0, 0];
        let gx = green_column_cg(&q, x, cfg.green_tol, &cache, false)?;
        let gy = green_column_cg(&q, y, cfg.green_tol, &cache, false)?;
        let mut qgx = vec![0.0; q.n_sites()];
        q.matrix().matvec(&gx.values, &mut qgx);
        qgx[bx.index_of(x)?] -= 1.0;
        let resid = qgx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sym = (gx.values[bx.index_of(y)?] - gy.values[bx.index_of(x)?]).abs();
        Ok((
            resid <= 100.0 * cfg.green_tol && sym <= 1e-8,
            format!("residual {resid:.3e}, asymmetry {sym:.3e}"),
        ))
    }));

    checks.push(check("harmonic_positive", || {
        let bx = LatticeBox::new(3, 2)?;
        let col = crate::solver::harmonic_column(&bx, [0, 0, 0, 0], &cache)?;
        let diag = col[bx.index_of([0, 0, 0, 0])?];
        let zeros = crate::solver::solve_laplace(&bx, &vec![0.0; bx.site_count()], 1e-10)?;
        Ok((
            diag > 0.0 && zeros.iter().all(|&v| v == 0.0),
            format!("Γ(0,0) = {diag:.4}"),
        ))
    }));

    checks.push(check("gbar_symmetry", || {
        let bx = LatticeBox::new(3, 2)?;
        let a = crate::solver::gbar(&bx, [1, 0, 0, 0], [-1, 1, 0, 0], &cache)?;
        let b = crate::solver::gbar(&bx, [-1, 1, 0, 0], [1, 0, 0, 0], &cache)?;
        Ok(((a - b).abs() < 1e-9, format!("|Ḡ(x,y)−Ḡ(y,x)| = {:.3e}", (a - b).abs())))
    }));

    checks.push(check("tail_sandwich", || {
        let mut ok = true;
        for k in 0..=600 {
            let a = 1.0 + 5.0 * k as f64 / 600.0;
            let lo = crate::gaussian::tail_lower(a)?;
            let mid = crate::gaussian::tail_exact(a)?;
            let hi = crate::gaussian::tail_upper(a)?;
            ok &= lo <= mid && mid <= hi;
        }
        for k in 0..100 {
            let a = k as f64 / 100.0;
            ok &= crate::gaussian::tail_exact(a)? <= crate::gaussian::tail_upper(a)?;
        }
        Ok((ok, "601 + 100 grid points".into()))
    }));

    checks.push(check("theory_identities", || {
        let mut worst = 0.0f64;
        for k in 1..100 {
            let beta = k as f64 / 100.0;
            worst = worst.max((theory::f_hb(2.0, beta, 1.0) - (1.0 + beta)).abs());
            let gs = theory::gamma_star(beta);
            worst = worst.max((theory::f_hb(2.0, beta, gs) - gs).abs());
        }
        let mut bound_ok = true;
        for i in 1..50 {
            for j in 1..50 {
                let alpha = i as f64 / 51.0;
                let beta = j as f64 / 51.0;
                bound_ok &= theory::rho(alpha, beta)
                    >= 4.0 * (1.0 - alpha * alpha) * (1.0 + beta) - 1e-12;
            }
        }
        Ok((
            worst < 1e-12 && bound_ok,
            format!("identity error {worst:.2e}, bound grid {bound_ok}"),
        ))
    }));

    checks.push(check("decompose_identity", || {
        let bx = LatticeBox::new(4, 2)?;
        let q = assemble_precision(&bx, Model::Membrane, cfg.convention)?;
        let f = crate::solver::factorize(&q)?;
        let phi = sample_exact(&q, &f, rng::derive(cfg.seed, &[91]))?;
        let b = crate::lattice::SubBox {
            corner: [-1, -1, 0, 0],
            side: 3,
        };
        let region = b.region(&bx);
        let split = crate::gaussian::conditional_decompose(&phi, &region)?;
        let mut worst = 0.0f64;
        for (i, &x) in region.sites().iter().enumerate() {
            let v = phi.value_at(x)?;
            worst = worst.max((v - split.mean_part[i] - split.residual[i]).abs() / v.abs().max(1.0));
        }
        Ok((worst <= 1e-12, format!("identity error {worst:.2e}")))
    }));

    checks.push(check("sampler_determinism", || {
        let bx = LatticeBox::new(3, 2)?;
        let q = assemble_precision(&bx, Model::Membrane, cfg.convention)?;
        let f = crate::solver::factorize(&q)?;
        let a = sample_exact(&q, &f, 7)?;
        let b = sample_exact(&q, &f, 7)?;
        let g1 = sample_gbar(&bx, 7, cfg.sample_tol)?;
        let g2 = sample_gbar(&bx, 7, cfg.sample_tol)?;
        Ok((
            a.values() == b.values() && g1.values() == g2.values(),
            "same seed, identical samples".into(),
        ))
    }));

    checks.push(check("budget_rejection", || {
        let r = LatticeBox::with_budget(100, 4, 1000);
        Ok((
            matches!(r, Err(Error::BudgetExceeded { .. })),
            "oversized box rejected".into(),
        ))
    }));

    match cfg.model {
        Model::Membrane => {
            checks.push(check("variance_slope", || {
                // Var(φ_0) against g log N on the d=4 ladder 3..8
                let mut pts = Vec::new();
                let mut devs = Vec::new();
                for n in 3..=8 {
                    let bx = LatticeBox::with_budget(n, 4, cfg.site_budget)?;
                    let q = assemble_precision(&bx, Model::Membrane, cfg.convention)?;
                    let col = green_column_cg(&q, [0, 0, 0, 0], cfg.green_tol, &cache, false)?;
                    let var = col.values[bx.index_of([0, 0, 0, 0])?];
                    pts.push(((n as f64).ln(), var));
                    devs.push((var - theory::g_const() * (n as f64).ln()).abs());
                }
                let (slope, _) = linear_fit(&pts);
                let non_expanding = devs.windows(2).all(|w| w[1] <= w[0] + 1e-9);
                Ok((
                    (0.65..=0.97).contains(&slope) && non_expanding,
                    format!("slope {slope:.4}, deviation band non-expanding {non_expanding}"),
                ))
            }));
        }
        Model::Dgff => {
            checks.push(check("harmonic_random_walk", || {
                // MC oracle: visit counts of the killed walk match Γ
                let bx = LatticeBox::new(3, 2)?;
                let x0 = [0, 0, 0, 0];
                let col = crate::solver::harmonic_column(&bx, x0, &cache)?;
                let walks = 200_000usize;
                let mut rg = rng::stream(rng::derive(cfg.seed, &[92]));
                let n = bx.site_count();
                let mut sum = vec![0f64; n];
                let mut sumsq = vec![0f64; n];
                let mut visits = vec![0f64; n];
                use rand::Rng;
                for _ in 0..walks {
                    for v in visits.iter_mut() {
                        *v = 0.0;
                    }
                    let mut pos = x0;
                    loop {
                        visits[bx.index_of(pos)?] += 1.0;
                        match rg.gen_range(0..4u8) {
                            0 => pos[0] += 1,
                            1 => pos[0] -= 1,
                            2 => pos[1] += 1,
                            _ => pos[1] -= 1,
                        }
                        if !bx.contains(pos) {
                            break;
                        }
                    }
                    for i in 0..n {
                        sum[i] += visits[i];
                        sumsq[i] += visits[i] * visits[i];
                    }
                }
                let mut ok = true;
                let mut worst = 0.0f64;
                for i in 0..n {
                    let mean = sum[i] / walks as f64;
                    let var = (sumsq[i] / walks as f64 - mean * mean).max(1e-12);
                    let se = (var / walks as f64).sqrt();
                    let z = (col[i] - mean).abs() / se;
                    worst = worst.max(z);
                    ok &= z <= 3.0;
                }
                Ok((ok, format!("worst z-score {worst:.2}")))
            }));
        }
    }

    Ok(checks)
}
