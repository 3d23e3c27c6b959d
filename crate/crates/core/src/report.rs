//! Run configuration, suite orchestration, and deterministic report files.
//!
//! A run is a pure function of its RunConfig: no timestamps, stable record
//! ordering, and per-task RNG streams make repeated runs byte-identical
//! regardless of worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{
    diameter_scan, injectivity_probe, lambda_limit_probe, verify_hessian_bounds, verify_hessian_sr,
    verify_laplacian_bounds, verify_laplacian_limits, ComparisonRecord, SampleSpec,
};
use crate::models::{parse_model_name, ModelSpace};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const ALL_SUITES: [&str; 5] = ["hessian", "laplacian", "vertical", "diameter", "injectivity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub model: String,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub base_point: Vec<f64>,
    #[serde(default = "default_suites")]
    pub suites: Vec<String>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: ReportFormat,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}
fn default_eps_grid() -> Vec<f64> {
    vec![1.0, 0.25, 0.0625, 0.015625]
}
fn default_suites() -> Vec<String> {
    vec!["all".to_string()]
}
fn default_samples() -> usize {
    24
}
fn default_seed() -> u64 {
    7
}
fn default_format() -> ReportFormat {
    ReportFormat::Csv
}

impl RunConfig {
    pub fn new(model: &str) -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            model: model.to_string(),
            eps_grid: default_eps_grid(),
            base_point: Vec::new(),
            suites: default_suites(),
            samples: default_samples(),
            seed: default_seed(),
            out_dir: None,
            format: default_format(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<ModelSpace> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let model = parse_model_name(&self.model)?;
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("eps_grid must be nonempty and positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if !self.base_point.is_empty() && self.base_point.len() != model.dim {
            return Err(Error::Config(format!(
                "base_point needs {} coordinates",
                model.dim
            )));
        }
        if !self.base_point.is_empty() && self.base_point.iter().any(|c| *c != 0.0) {
            return Err(Error::Config(
                "nonzero base points are equivalent to the origin by left-invariance; only the origin is supported"
                    .into(),
            ));
        }
        for s in &self.suites {
            if s != "all" && !ALL_SUITES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown suite '{s}'")));
            }
        }
        Ok(model)
    }

    pub fn selected_suites(&self) -> Vec<&'static str> {
        if self.suites.iter().any(|s| s == "all") {
            ALL_SUITES.to_vec()
        } else {
            ALL_SUITES.iter().copied().filter(|s| self.suites.iter().any(|x| x == s)).collect()
        }
    }

    /// Canonical JSON echo of the effective configuration (report headers).
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub records: usize,
    pub unflagged: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: RunConfig,
    pub summaries: Vec<SuiteSummary>,
    pub records: Vec<ComparisonRecord>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.summaries.iter().all(|s| s.pass)
    }
}

/// Reassign a generated record to its reporting suite: vertical quantities
/// are split out of the hessian/laplacian generators.
fn reporting_suite(quantity: &str) -> &'static str {
    if quantity.contains("Vertical") || quantity.starts_with("LapV") {
        "vertical"
    } else if quantity.starts_with("Hess") {
        "hessian"
    } else if quantity.starts_with("Lap") || quantity.starts_with("Lambda") || quantity.starts_with("Route") {
        "laplacian"
    } else if quantity.starts_with("Diam") {
        "diameter"
    } else {
        "injectivity"
    }
}

/// Run the verification suites of the configuration and assemble the report.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let model_plain = config.validate()?;
    let model = Arc::new(model_plain);
    let selected = config.selected_suites();
    let needs = |s: &str| selected.contains(&s);
    let spec = SampleSpec { count: config.samples, seed: config.seed, bvp_seeds: 32 };

    // independent cells, computed in parallel, merged deterministically
    enum Cell {
        HessianEps(f64),
        LaplacianEps(f64),
        HessianSr,
        LaplacianLimits,
        LambdaLimit,
        Diameter,
        Injectivity(f64),
    }
    let mut cells: Vec<Cell> = Vec::new();
    if needs("hessian") || needs("vertical") {
        for &e in &config.eps_grid {
            cells.push(Cell::HessianEps(e));
        }
        cells.push(Cell::HessianSr);
    }
    if needs("laplacian") || needs("vertical") {
        for &e in &config.eps_grid {
            cells.push(Cell::LaplacianEps(e));
        }
        cells.push(Cell::LaplacianLimits);
        cells.push(Cell::LambdaLimit);
    }
    if needs("diameter") {
        cells.push(Cell::Diameter);
    }
    if needs("injectivity") {
        for &e in &config.eps_grid {
            cells.push(Cell::Injectivity(e));
        }
    }

    let run_cell = |cell: &Cell| -> Result<Vec<ComparisonRecord>> {
        match cell {
            Cell::HessianEps(e) => verify_hessian_bounds(&model, *e, &spec),
            Cell::LaplacianEps(e) => verify_laplacian_bounds(&model, *e, &spec, None),
            Cell::HessianSr => verify_hessian_sr(&model, &spec, 3),
            Cell::LaplacianLimits => verify_laplacian_limits(&model, &spec),
            Cell::LambdaLimit => lambda_limit_probe(&model, config.samples.min(20), config.seed),
            Cell::Diameter => diameter_scan(&model, config.samples.max(40), config.seed),
            Cell::Injectivity(e) => injectivity_probe(&model, *e).map(|r| vec![r]),
        }
    };

    let results: Vec<Result<Vec<ComparisonRecord>>> = cells.par_iter().map(run_cell).collect();
    let mut records: Vec<ComparisonRecord> = Vec::new();
    for r in results {
        records.extend(r?);
    }
    // route to reporting suites and keep only the selected ones
    for rec in records.iter_mut() {
        rec.suite = reporting_suite(&rec.quantity).to_string();
    }
    records.retain(|r| selected.contains(&r.suite.as_str()));
    // deterministic order
    records.sort_by(|a, b| {
        (a.suite.as_str(), a.quantity.as_str())
            .cmp(&(b.suite.as_str(), b.quantity.as_str()))
            .then(a.eps.partial_cmp(&b.eps).unwrap())
            .then(a.r.partial_cmp(&b.r).unwrap())
            .then(a.lambda.partial_cmp(&b.lambda).unwrap())
    });

    let mut summaries = Vec::new();
    for suite in &selected {
        let recs: Vec<&ComparisonRecord> = records.iter().filter(|r| r.suite == *suite).collect();
        let unflagged = recs.iter().filter(|r| r.flags.is_empty()).count();
        let violations = recs.iter().filter(|r| !r.passes()).count();
        let worst = recs
            .iter()
            .filter(|r| r.flags.is_empty())
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min);
        summaries.push(SuiteSummary {
            suite: suite.to_string(),
            records: recs.len(),
            unflagged,
            violations,
            worst_margin: if worst.is_finite() { worst } else { 0.0 },
            pass: violations == 0,
        });
    }
    Ok(RunReport { format_version: FORMAT_VERSION, config: config.clone(), summaries, records })
}

/// Fixed 15-significant-digit decimal formatting for every float field.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.14e}")
    } else {
        format!("{v}")
    }
}

fn join_coords(v: &[f64]) -> String {
    v.iter().map(|c| fmt_f64(*c)).collect::<Vec<_>>().join(";")
}

/// CSV serialization of comparison records with the config echoed in header
/// comments; stable column order.
pub fn records_to_csv(config_echo: &str, records: &[&ComparisonRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# format_version={FORMAT_VERSION}");
    let _ = writeln!(out, "# config={config_echo}");
    let _ = writeln!(out, "model,suite,quantity,eps,r,lambda,measured,bound,margin,flags,x0,x");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.model,
            r.suite,
            r.quantity,
            fmt_f64(r.eps),
            fmt_f64(r.r),
            fmt_f64(r.lambda),
            fmt_f64(r.measured),
            fmt_f64(r.bound),
            fmt_f64(r.margin),
            r.flags.join("+"),
            join_coords(&r.x0),
            join_coords(&r.x),
        );
    }
    out
}

/// gnuplot-friendly whitespace table.
pub fn records_to_table(config_echo: &str, records: &[&ComparisonRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# format_version={FORMAT_VERSION}");
    let _ = writeln!(out, "# config={config_echo}");
    let _ = writeln!(out, "# quantity eps r lambda measured bound margin flagged");
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            r.quantity,
            fmt_f64(r.eps),
            fmt_f64(r.r),
            fmt_f64(r.lambda),
            fmt_f64(r.measured),
            fmt_f64(r.bound),
            fmt_f64(r.margin),
            usize::from(!r.flags.is_empty()),
        );
    }
    out
}

/// Render the per-suite report files (never interleaving suites) and return
/// (file name, contents) pairs.
pub fn render_reports(report: &RunReport) -> Vec<(String, String)> {
    let echo = report.config.echo();
    let mut files = Vec::new();
    for summary in &report.summaries {
        let recs: Vec<&ComparisonRecord> =
            report.records.iter().filter(|r| r.suite == summary.suite).collect();
        let (ext, body) = match report.config.format {
            ReportFormat::Csv => ("csv", records_to_csv(&echo, &recs)),
            ReportFormat::Table => ("table", records_to_table(&echo, &recs)),
            ReportFormat::Json => {
                #[derive(Serialize)]
                struct SuiteFile<'a> {
                    format_version: u32,
                    config: &'a RunConfig,
                    summary: &'a SuiteSummary,
                    records: Vec<&'a ComparisonRecord>,
                }
                let f = SuiteFile {
                    format_version: FORMAT_VERSION,
                    config: &report.config,
                    summary,
                    records: recs,
                };
                ("json", serde_json::to_string_pretty(&f).expect("serializes") + "\n")
            }
        };
        files.push((format!("report_{}.{ext}", summary.suite), body));
    }
    files
}

/// Write report files into the configured output directory.
pub fn write_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, body) in render_reports(report) {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One PASS/FAIL line per suite.
pub fn summary_lines(report: &RunReport) -> Vec<String> {
    report
        .summaries
        .iter()
        .map(|s| {
            format!(
                "{}: {} ({} records, {} unflagged, {} violations, worst margin {:+.3e})",
                s.suite,
                if s.pass { "PASS" } else { "FAIL" },
                s.records,
                s.unflagged,
                s.violations,
                s.worst_margin
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new("heisenberg3");
        assert!(c.validate().is_ok());
        c.suites = vec!["nope".into()];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::new("torus5");
        assert!(c.validate().is_err());
        c = RunConfig::new("heisenberg3");
        c.eps_grid = vec![0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_roundtrips_and_echoes() {
        let c = RunConfig::new("hopf3");
        let txt = c.echo();
        let back: RunConfig = serde_json::from_str(&txt).unwrap();
        assert_eq!(back.model, "hopf3");
        assert_eq!(back.format_version, FORMAT_VERSION);
    }

    #[test]
    fn empty_record_list_gives_header_only_csv() {
        let csv = records_to_csv("{}", &[]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("model,suite"));
    }

    #[test]
    fn small_run_is_deterministic() {
        let mut c = RunConfig::new("heisenberg3");
        c.suites = vec!["injectivity".into()];
        c.eps_grid = vec![1.0, 0.25];
        c.samples = 4;
        let r1 = run(&c).unwrap();
        let r2 = run(&c).unwrap();
        let f1 = render_reports(&r1);
        let f2 = render_reports(&r2);
        assert_eq!(f1, f2);
        assert!(r1.all_pass());
    }
}
