//! Command-line experiment runner: configuration from a TOML file with
//! flag overrides, data on files/stdout, progress on stderr.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use membrane::experiment::{
    run_clusters, run_exponents, run_green, run_max, run_pairs, run_sample, run_square,
    run_validate, ExperimentConfig, Report, ReportFormat, SamplerChoice,
};
use membrane::operators::{LaplacianConvention, Model};

#[derive(Parser)]
#[command(name = "membrane", version, about = "Membrane-model laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant and bound validation suite
    Validate(CommonArgs),
    /// Exact covariance diagnostics: variances, covariance profile, G vs Ḡ
    Green(CommonArgs),
    /// Draw and persist field samples
    Sample(CommonArgs),
    /// High-point counts and dimension fits
    Exponents(CommonArgs),
    /// Cluster counts around centers (unconditional and conditioned)
    Clusters(CommonArgs),
    /// Pairs of high points within distance N^beta
    Pairs(CommonArgs),
    /// Biggest uniformly-high sub-box
    Square(CommonArgs),
    /// Field maxima against the growth rate
    Max(CommonArgs),
    /// Refit exponent summaries from an existing NDJSON rows file
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML experiment configuration; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    model: Option<Model>,
    /// Box dimension d
    #[arg(long)]
    dim: Option<u8>,
    /// Comma-separated list of box parameters N
    #[arg(long = "N", value_delimiter = ',')]
    n: Option<Vec<u32>>,
    /// Bulk fraction ell
    #[arg(long)]
    ell: Option<f64>,
    /// Comma-separated eta levels
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    /// Comma-separated alpha levels
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Comma-separated beta levels
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_sampler)]
    sampler: Option<SamplerChoice>,
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    /// Bypass the solve cache entirely
    #[arg(long = "no-cache")]
    no_cache: bool,
    /// Output base path; writes <out>.rows.<ext> and <out>.fits.<ext>
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<ReportFormat>,
    /// Site budget: hard cap on (2N+1)^d
    #[arg(long)]
    budget: Option<u64>,
    /// Laplacian normalization (normalized|unnormalized), for sensitivity runs
    #[arg(long, value_parser = parse_convention)]
    convention: Option<LaplacianConvention>,
}

#[derive(Args, Clone)]
struct ReportArgs {
    /// NDJSON rows file produced by any subcommand
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<ReportFormat>,
}

fn parse_model(s: &str) -> Result<Model, String> {
    match s {
        "membrane" => Ok(Model::Membrane),
        "dgff" => Ok(Model::Dgff),
        _ => Err(format!("unknown model '{s}' (membrane|dgff)")),
    }
}

fn parse_sampler(s: &str) -> Result<SamplerChoice, String> {
    match s {
        "auto" => Ok(SamplerChoice::Auto),
        "exact" => Ok(SamplerChoice::Exact),
        "gbar" => Ok(SamplerChoice::Gbar),
        _ => Err(format!("unknown sampler '{s}' (auto|exact|gbar)")),
    }
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "ndjson" => Ok(ReportFormat::Ndjson),
        _ => Err(format!("unknown format '{s}' (csv|ndjson)")),
    }
}

fn parse_convention(s: &str) -> Result<LaplacianConvention, String> {
    match s {
        "normalized" => Ok(LaplacianConvention::Normalized),
        "unnormalized" => Ok(LaplacianConvention::Unnormalized),
        _ => Err(format!("unknown convention '{s}' (normalized|unnormalized)")),
    }
}

impl CommonArgs {
    fn into_config(self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.model {
            cfg.model = v;
            // keep the dimension consistent with the model unless overridden
            if self.dim.is_none() && self.config.is_none() {
                cfg.d = match v {
                    Model::Membrane => 4,
                    Model::Dgff => 2,
                };
            }
        }
        if let Some(v) = self.dim {
            cfg.d = v;
        }
        if let Some(v) = self.n {
            cfg.n_list = v;
        }
        if let Some(v) = self.ell {
            cfg.ell = v;
        }
        if let Some(v) = self.eta {
            cfg.eta_list = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha_list = v;
        }
        if let Some(v) = self.beta {
            cfg.beta_list = v;
        }
        if let Some(v) = self.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sampler {
            cfg.sampler = v;
        }
        if let Some(v) = self.cache_dir {
            cfg.cache_dir = Some(v);
        }
        if self.no_cache {
            cfg.no_cache = true;
        }
        if let Some(v) = self.out {
            cfg.out = Some(v);
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if let Some(v) = self.budget {
            cfg.site_budget = v;
        }
        if let Some(v) = self.convention {
            cfg.convention = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(report: &Report, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    match &cfg.out {
        Some(base) => {
            let (rows, fits) = report.emit_files(base, cfg.format)?;
            eprintln!("wrote {} and {}", rows.display(), fits.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            report.write_rows(&mut w, cfg.format)?;
            report.write_fits(&mut w, cfg.format)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn refit(args: ReportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    // group count-bearing rows by (kind, eta, alpha, beta)
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, String, String), Vec<(f64, f64)>> = BTreeMap::new();
    let mut predictions: BTreeMap<(String, String, String, String), f64> = BTreeMap::new();
    let mut meta: Option<(String, String, u8)> = None;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line)
            .with_context(|| "parsing NDJSON row (is the input ndjson-formatted?)")?;
        if v.get("kind").and_then(|k| k.as_str()) == Some("header") {
            continue;
        }
        let kind = v["kind"].as_str().unwrap_or_default().to_string();
        let n = v["n"].as_u64().unwrap_or(0);
        if n < 2 {
            continue;
        }
        let stat = match kind.as_str() {
            "high_points" | "pairs" | "pairs_nodiag" | "square" | "cluster" => {
                v["count"].as_f64().filter(|&c| c > 0.0)
            }
            "cluster_cond" => v["value"].as_f64().map(f64::exp),
            _ => None,
        };
        let Some(stat) = stat else { continue };
        let key = (
            kind,
            v["eta"].to_string(),
            v["alpha"].to_string(),
            v["beta"].to_string(),
        );
        groups.entry(key.clone()).or_default().push((n as f64, stat));
        if let Some(p) = v["predicted"].as_f64() {
            predictions.insert(key, p);
        }
        if meta.is_none() {
            meta = Some((
                v["config"].as_str().unwrap_or("unknown").to_string(),
                v["model"].as_str().unwrap_or("unknown").to_string(),
                v["d"].as_u64().unwrap_or(0) as u8,
            ));
        }
    }
    if groups.is_empty() {
        bail!("no fit-eligible rows found in {}", args.input.display());
    }
    let (config, model, d) = meta.unwrap();
    let mut report = Report::default();
    for (key, points) in &groups {
        let fit = match membrane::statistics::exponent_fit(points) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let opt = |s: &str| -> Option<f64> { s.parse().ok() };
        report.fits.push(membrane::experiment::FitRow {
            schema: membrane::experiment::SCHEMA_VERSION,
            code: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            kind: key.0.clone(),
            model: model.clone(),
            d,
            eta: opt(&key.1),
            alpha: opt(&key.2),
            beta: opt(&key.3),
            slope: fit.slope,
            intercept: fit.intercept,
            residual_norm: fit.residual_norm,
            half_width: fit.half_width,
            points: fit.points.len() as u32,
            dropped: fit.dropped as u32,
            predicted: predictions.get(key).copied(),
            ratio_last: fit.ratios.last().copied(),
        });
    }
    let format = args.format.unwrap_or(ReportFormat::Csv);
    match args.out {
        Some(base) => {
            let (_, fits) = report.emit_files(&base, format)?;
            eprintln!("wrote {}", fits.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            report.write_fits(&mut w, format)?;
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate(args) => {
            let cfg = args.into_config()?;
            let checks = run_validate(&cfg)?;
            let mut failed = 0;
            for c in &checks {
                println!(
                    "{} {} — {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                if !c.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                bail!("{failed} validation check(s) failed");
            }
        }
        Command::Green(args) => {
            let cfg = args.into_config()?;
            emit(&run_green(&cfg)?, &cfg)?;
        }
        Command::Sample(args) => {
            let cfg = args.into_config()?;
            emit(&run_sample(&cfg)?, &cfg)?;
        }
        Command::Exponents(args) => {
            let cfg = args.into_config()?;
            emit(&run_exponents(&cfg)?, &cfg)?;
        }
        Command::Clusters(args) => {
            let cfg = args.into_config()?;
            emit(&run_clusters(&cfg)?, &cfg)?;
        }
        Command::Pairs(args) => {
            let cfg = args.into_config()?;
            emit(&run_pairs(&cfg)?, &cfg)?;
        }
        Command::Square(args) => {
            let cfg = args.into_config()?;
            emit(&run_square(&cfg)?, &cfg)?;
        }
        Command::Max(args) => {
            let cfg = args.into_config()?;
            emit(&run_max(&cfg)?, &cfg)?;
        }
        Command::Report(args) => refit(args)?,
    }
    Ok(())
}
