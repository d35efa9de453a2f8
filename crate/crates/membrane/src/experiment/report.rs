//! Machine-readable report rows and fit summaries.
//!
//! Data goes to files or standard output; progress goes to standard error,
//! never mixed. Formats: CSV with a fixed column order and 17-significant-
//! digit floats, or NDJSON with one self-describing object per line. No
//! timestamps anywhere, so identical runs produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::Result;

pub const SCHEMA_VERSION: &str = "membrane.report.v1";

pub fn code_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// 17 significant digits: enough to round-trip every finite f64 exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Ndjson,
}

/// One observation row: a flattened per-replica record or a deterministic
/// covariance-check record. Every row is self-describing (schema, code
/// version, config fingerprint).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReportRow {
    pub schema: &'static str,
    pub code: &'static str,
    pub config: String,
    pub kind: String,
    pub model: String,
    pub d: u8,
    pub n: u32,
    pub ell: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replica: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<f64>,
}

impl ReportRow {
    pub fn new(config: &str, kind: &str, model: crate::operators::Model, d: u8, n: u32, ell: f64) -> Self {
        ReportRow {
            schema: SCHEMA_VERSION,
            code: code_version(),
            config: config.to_string(),
            kind: kind.to_string(),
            model: model_name(model).to_string(),
            d,
            n,
            ell,
            eta: None,
            alpha: None,
            beta: None,
            replica: None,
            seed: None,
            sampler: None,
            threshold: None,
            count: None,
            value: None,
            ratio: None,
            predicted: None,
            site: None,
            dist: None,
        }
    }
}

pub fn model_name(m: crate::operators::Model) -> &'static str {
    match m {
        crate::operators::Model::Membrane => "membrane",
        crate::operators::Model::Dgff => "dgff",
    }
}

/// Exponent-fit summary over one level of one observable.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitRow {
    pub schema: &'static str,
    pub code: &'static str,
    pub config: String,
    pub kind: String,
    pub model: String,
    pub d: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub residual_norm: f64,
    pub half_width: f64,
    pub points: u32,
    pub dropped: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<f64>,
    /// Mean per-point ratio at the largest N in the fit (the theory's
    /// limit object).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_last: Option<f64>,
}

/// A complete emission unit: rows plus fit summaries.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub fits: Vec<FitRow>,
}

const ROW_COLUMNS: &[&str] = &[
    "schema", "code", "config", "kind", "model", "d", "n", "ell", "eta", "alpha", "beta",
    "replica", "seed", "sampler", "threshold", "count", "value", "ratio", "predicted", "site",
    "dist",
];

const FIT_COLUMNS: &[&str] = &[
    "schema", "code", "config", "kind", "model", "d", "eta", "alpha", "beta", "slope",
    "intercept", "residual_norm", "half_width", "points", "dropped", "predicted", "ratio_last",
];

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl Report {
    pub fn merge(&mut self, other: Report) {
        self.rows.extend(other.rows);
        self.fits.extend(other.fits);
    }

    pub fn write_rows(&self, w: &mut dyn Write, format: ReportFormat) -> Result<()> {
        match format {
            ReportFormat::Csv => {
                writeln!(w, "# {}", SCHEMA_VERSION)?;
                writeln!(w, "{}", ROW_COLUMNS.join(","))?;
                for r in &self.rows {
                    let fields = [
                        r.schema.to_string(),
                        r.code.to_string(),
                        r.config.clone(),
                        r.kind.clone(),
                        r.model.clone(),
                        r.d.to_string(),
                        r.n.to_string(),
                        fmt_float(r.ell),
                        opt_f(r.eta),
                        opt_f(r.alpha),
                        opt_f(r.beta),
                        r.replica.map(|v| v.to_string()).unwrap_or_default(),
                        r.seed.map(|v| v.to_string()).unwrap_or_default(),
                        r.sampler.clone().unwrap_or_default(),
                        opt_f(r.threshold),
                        r.count.map(|v| v.to_string()).unwrap_or_default(),
                        opt_f(r.value),
                        opt_f(r.ratio),
                        opt_f(r.predicted),
                        r.site.clone().unwrap_or_default(),
                        opt_f(r.dist),
                    ];
                    writeln!(w, "{}", fields.join(","))?;
                }
            }
            ReportFormat::Ndjson => {
                writeln!(
                    w,
                    "{}",
                    serde_json::json!({"schema": SCHEMA_VERSION, "kind": "header"})
                )?;
                for r in &self.rows {
                    writeln!(w, "{}", serde_json::to_string(r).expect("row serializes"))?;
                }
            }
        }
        Ok(())
    }

    pub fn write_fits(&self, w: &mut dyn Write, format: ReportFormat) -> Result<()> {
        match format {
            ReportFormat::Csv => {
                writeln!(w, "# {}", SCHEMA_VERSION)?;
                writeln!(w, "{}", FIT_COLUMNS.join(","))?;
                for f in &self.fits {
                    let fields = [
                        f.schema.to_string(),
                        f.code.to_string(),
                        f.config.clone(),
                        f.kind.clone(),
                        f.model.clone(),
                        f.d.to_string(),
                        opt_f(f.eta),
                        opt_f(f.alpha),
                        opt_f(f.beta),
                        fmt_float(f.slope),
                        fmt_float(f.intercept),
                        fmt_float(f.residual_norm),
                        fmt_float(f.half_width),
                        f.points.to_string(),
                        f.dropped.to_string(),
                        opt_f(f.predicted),
                        opt_f(f.ratio_last),
                    ];
                    writeln!(w, "{}", fields.join(","))?;
                }
            }
            ReportFormat::Ndjson => {
                writeln!(
                    w,
                    "{}",
                    serde_json::json!({"schema": SCHEMA_VERSION, "kind": "header"})
                )?;
                for f in &self.fits {
                    writeln!(w, "{}", serde_json::to_string(f).expect("fit serializes"))?;
                }
            }
        }
        Ok(())
    }

    /// Write `<base>.rows.<ext>` and `<base>.fits.<ext>`; returns the paths.
    pub fn emit_files(&self, base: &Path, format: ReportFormat) -> Result<(PathBuf, PathBuf)> {
        let ext = match format {
            ReportFormat::Csv => "csv",
            ReportFormat::Ndjson => "ndjson",
        };
        if let Some(dir) = base.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let rows_path = base.with_extension(format!("rows.{ext}"));
        let fits_path = base.with_extension(format!("fits.{ext}"));
        let mut rw = std::io::BufWriter::new(std::fs::File::create(&rows_path)?);
        self.write_rows(&mut rw, format)?;
        let mut fw = std::io::BufWriter::new(std::fs::File::create(&fits_path)?);
        self.write_fits(&mut fw, format)?;
        Ok((rows_path, fits_path))
    }

    /// Rows as a byte vector (used by reproducibility checks).
    pub fn rows_bytes(&self, format: ReportFormat) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_rows(&mut buf, format).expect("in-memory write");
        buf
    }
}
