// temporary probe, will be deleted
use membrane::lattice::LatticeBox;
use membrane::operators::{assemble_precision, LaplacianConvention, Model};
use membrane::solver::factorize;
use std::time::Instant;

#[test]
#[ignore]
fn probe_membrane_n6_d4() {
    let t0 = Instant::now();
    let bx = LatticeBox::new(6, 4).unwrap();
    let q = assemble_precision(&bx, Model::Membrane, LaplacianConvention::Normalized).unwrap();
    println!("assemble {:?} n={} nnz={}", t0.elapsed(), q.n_sites(), q.matrix().nnz());
    let t1 = Instant::now();
    let f = factorize(&q).unwrap();
    println!("factor {:?} nnz_l={} flops={:.3e}", t1.elapsed(), f.stats().nnz_l, f.stats().flops);
    let t2 = Instant::now();
    let s = membrane::gaussian::sample_exact(&q, &f, 1).unwrap();
    println!("sample {:?} v0={}", t2.elapsed(), s.values()[0]);
}

#[test]
#[ignore]
fn probe_membrane_n8_d4() {
    let t0 = Instant::now();
    let bx = LatticeBox::new(8, 4).unwrap();
    let q = assemble_precision(&bx, Model::Membrane, LaplacianConvention::Normalized).unwrap();
    println!("assemble {:?} n={} nnz={}", t0.elapsed(), q.n_sites(), q.matrix().nnz());
    let t1 = Instant::now();
    let f = factorize(&q).unwrap();
    println!("factor {:?} nnz_l={} flops={:.3e}", t1.elapsed(), f.stats().nnz_l, f.stats().flops);
    let t2 = Instant::now();
    let s = membrane::gaussian::sample_exact(&q, &f, 1).unwrap();
    println!("sample {:?} v0={}", t2.elapsed(), s.values()[0]);
}

#[test]
#[ignore]
fn probe_dgff_n512_d2() {
    let t0 = Instant::now();
    let bx = LatticeBox::new(512, 2).unwrap();
    let q = assemble_precision(&bx, Model::Dgff, LaplacianConvention::Normalized).unwrap();
    println!("assemble {:?} n={} nnz={}", t0.elapsed(), q.n_sites(), q.matrix().nnz());
    let t1 = Instant::now();
    let f = factorize(&q).unwrap();
    println!("factor {:?} nnz_l={} flops={:.3e}", t1.elapsed(), f.stats().nnz_l, f.stats().flops);
    let t2 = Instant::now();
    let s = membrane::gaussian::sample_exact(&q, &f, 1).unwrap();
    println!("sample {:?} v0={}", t2.elapsed(), s.values()[0]);
}

#[test]
#[ignore]
fn probe_green_cg_n8_d4() {
    let bx = LatticeBox::new(8, 4).unwrap();
    let q = assemble_precision(&bx, Model::Membrane, LaplacianConvention::Normalized).unwrap();
    let cache = membrane::solver::Cache::disabled();
    let t = Instant::now();
    let g = membrane::solver::green_column_cg(&q, [0,0,0,0], 1e-9, &cache, false).unwrap();
    let i0 = bx.index_of([0,0,0,0]).unwrap();
    println!("plain cg {:?} var={}", t.elapsed(), g.values[i0]);
    let t = Instant::now();
    let g2 = membrane::solver::green_column_cg(&q, [1,0,0,0], 1e-9, &cache, true).unwrap();
    println!("precond cg {:?} var={}", t.elapsed(), g2.values[bx.index_of([1,0,0,0]).unwrap()]);
}

#[test]
#[ignore]
fn probe_variance_ladder() {
    let cache = membrane::solver::Cache::disabled();
    let mut pts = Vec::new();
    for n in 3..=8 {
        let bx = LatticeBox::new(n, 4).unwrap();
        let q = assemble_precision(&bx, Model::Membrane, LaplacianConvention::Normalized).unwrap();
        let g = membrane::solver::green_column_cg(&q, [0,0,0,0], 1e-9, &cache, false).unwrap();
        let var = g.values[bx.index_of([0,0,0,0]).unwrap()];
        let dev = var - membrane::theory::g_const() * (n as f64).ln();
        println!("N={} var={:.6} dev={:.6}", n, var, dev);
        pts.push((n as f64, var));
    }
    // linear fit of var vs log N
    let logs: Vec<(f64,f64)> = pts.iter().map(|&(n,v)| (n.ln(), v)).collect();
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0*p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0*p.1).sum();
    let slope = (m*sxy - sx*sy)/(m*sxx - sx*sx);
    println!("variance slope vs log N = {:.4} (g = {:.4})", slope, membrane::theory::g_const());
}

#[test]
#[ignore]
fn probe_covariance_profile() {
    use membrane::solver::{green_column_cg, gbar, Cache};
    let cache = Cache::disabled();
    let g = membrane::theory::g_const();
    for n in [4i32, 6, 8] {
        let bx = LatticeBox::new(n, 4).unwrap();
        let region = bx.inner_region(0.25).unwrap();
        let q = assemble_precision(&bx, Model::Membrane, LaplacianConvention::Normalized).unwrap();
        let col = green_column_cg(&q, [0,0,0,0], 1e-9, &cache, false).unwrap();
        // stratified partners: axes steps 1,2,4..., diagonals
        let mut partners: Vec<[i32;4]> = Vec::new();
        let lim = 0.25 * n as f64;
        let mut dirs: Vec<[i32;4]> = vec![[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1],[1,1,0,0],[1,0,1,0],[1,0,0,1],[0,1,1,0],[0,1,0,1],[0,0,1,1],[1,1,1,1]];
        for dir in dirs.drain(..) {
            let mut step = 1i32;
            loop {
                let y = [dir[0]*step, dir[1]*step, dir[2]*step, dir[3]*step];
                let norm = ((y[0]*y[0]+y[1]*y[1]+y[2]*y[2]+y[3]*y[3]) as f64).sqrt();
                if norm > lim || !region.contains(y) { break; }
                partners.push(y);
                step *= 2;
            }
        }
        partners.sort_unstable(); partners.dedup();
        let mut max_dev: f64 = 0.0;
        let mut max_gap: f64 = 0.0;
        let var = col.values[bx.index_of([0,0,0,0]).unwrap()];
        max_gap = max_gap.max((var - gbar(&bx, [0,0,0,0], [0,0,0,0], &cache).unwrap()).abs());
        for &y in &partners {
            let dist = ((y[0]*y[0]+y[1]*y[1]+y[2]*y[2]+y[3]*y[3]) as f64).sqrt();
            let cov = col.values[bx.index_of(y).unwrap()];
            let dev = (cov - g * ((n as f64).ln() - dist.ln())).abs();
            max_dev = max_dev.max(dev);
            let gb = gbar(&bx, [0,0,0,0], y, &cache).unwrap();
            max_gap = max_gap.max((cov - gb).abs());
            if n == 8 { println!("  y={:?} dist={:.3} cov={:.4} dev={:.4} gap={:.4}", &y[..4], dist, cov, dev, (cov-gb).abs()); }
        }
        println!("N={} partners={} max_dev={:.4} max_gap={:.4} var={:.4}", n, partners.len(), max_dev, max_gap, var);
    }
}

#[test]
#[ignore]
fn probe_trend_ladder() {
    use membrane::experiment::*;
    let base = ExperimentConfig {
        model: Model::Membrane,
        d: 4,
        ell: 0.25,
        eta_list: vec![0.3, 0.5],
        alpha_list: vec![0.5],
        beta_list: vec![0.3, 0.5],
        seed: 2024,
        ..Default::default()
    };
    let exact = ExperimentConfig { n_list: vec![4,6,8], replicas: 32, sampler: SamplerChoice::Exact, ..base.clone() };
    let gbar = ExperimentConfig { n_list: vec![10,12,16], replicas: 12, sampler: SamplerChoice::Gbar, ..base.clone() };
    for (label, runner) in [("exponents", run_exponents as fn(&ExperimentConfig) -> membrane::Result<Report>),
                            ("pairs", run_pairs), ("square", run_square), ("clusters", run_clusters)] {
        let t = std::time::Instant::now();
        let mut rep = runner(&exact).unwrap();
        rep.merge(runner(&gbar).unwrap());
        eprintln!("{label} took {:?}", t.elapsed());
        // mean ratio per (kind, n, eta, alpha, beta)
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<(String, String, u32), (f64, u32)> = BTreeMap::new();
        for row in &rep.rows {
            if let Some(r) = row.ratio {
                let level = format!("eta{:?} a{:?} b{:?}", row.eta, row.alpha, row.beta);
                let e = acc.entry((row.kind.clone(), level, row.n)).or_insert((0.0, 0));
                e.0 += r;
                e.1 += 1;
            }
        }
        for ((kind, level, n), (sum, cnt)) in &acc {
            println!("{label} {kind} {level} N={n}: mean_ratio={:.4} ({} reps)", sum / *cnt as f64, cnt);
        }
    }
}

#[test]
#[ignore]
fn probe_dgff_calibration() {
    use membrane::experiment::*;
    let cfg = ExperimentConfig {
        model: Model::Dgff,
        d: 2,
        n_list: vec![64, 128, 256, 512],
        ell: 0.25,
        eta_list: vec![0.3, 0.5],
        replicas: 50,
        seed: 7,
        sampler: SamplerChoice::Exact,
        ..Default::default()
    };
    let t = std::time::Instant::now();
    let rep = run_exponents(&cfg).unwrap();
    eprintln!("dgff calibration took {:?}", t.elapsed());
    for fit in &rep.fits {
        println!(
            "eta={:?} slope={:.4} predicted={:?} hw={:.4} ratio_last={:?}",
            fit.eta, fit.slope, fit.predicted, fit.half_width, fit.ratio_last
        );
    }
}
