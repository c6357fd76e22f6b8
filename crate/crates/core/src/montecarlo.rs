//! Dynamic logit designs on bipartite panels and the replication harness around them.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::bias_reports;
use crate::error::{Error, Result};
use crate::family::Family;
use crate::panel::{validate, PanelDataset, Structure};
use crate::solver::{fit, FitOptions, SeparationPolicy};
use crate::spec::{FeSpec, SpecId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dgp {
    /// Interacted effects α_it + γ_jt + ρ_ij, estimated with spec 3.b.
    I,
    /// One-way effects α_i + γ_j + ρ_t, estimated with spec 3.a.
    II,
}

impl Dgp {
    pub fn spec_id(self) -> SpecId {
        match self {
            Dgp::I => SpecId::S3b,
            Dgp::II => SpecId::S3a,
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dgp::I => "1",
            Dgp::II => "2",
        })
    }
}

impl FromStr for Dgp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "I" | "i" => Ok(Dgp::I),
            "2" | "II" | "ii" => Ok(Dgp::II),
            _ => Err(Error::InvalidConfig(format!("unknown DGP '{s}' (expected 1 or 2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: Dgp,
    pub n1: usize,
    pub replications: usize,
    pub seed: u64,
    pub bandwidths: Vec<usize>,
    pub beta_y: f64,
    pub beta_x: f64,
    pub fe_sd: f64,
}

impl SimConfig {
    pub fn new(dgp: Dgp, n1: usize, replications: usize, seed: u64) -> Self {
        Self {
            dgp,
            n1,
            replications,
            seed,
            bandwidths: vec![0, 1, 2, 3, 4],
            beta_y: 0.5,
            beta_x: 1.0,
            fe_sd: (1.0f64 / 24.0).sqrt(),
        }
    }

    pub fn n2(&self) -> usize {
        self.n1 / 2
    }

    pub fn t(&self) -> usize {
        self.n1 / 5
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || !self.n1.is_multiple_of(10) {
            return Err(Error::InvalidConfig(format!("n1 must be a positive multiple of 10, got {}", self.n1)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if !(self.fe_sd >= 0.0) || !self.beta_x.is_finite() || !self.beta_y.is_finite() {
            return Err(Error::InvalidConfig("fe_sd must be >= 0 and the coefficients finite".into()));
        }
        Ok(())
    }

    /// Estimators reported for this design: the correction only applies to DGP I.
    pub fn estimators(&self) -> Vec<Estimator> {
        let mut out = vec![Estimator::Uncorrected];
        if self.dgp == Dgp::I {
            out.extend(self.bandwidths.iter().map(|&h| Estimator::Debiased(h)));
        }
        out
    }

    fn truth(&self) -> [f64; 2] {
        [self.beta_y, self.beta_x]
    }
}

// independent random streams within a replication
const STREAM_FE: u64 = 0;
const STREAM_X: u64 = 1;
const STREAM_U: u64 = 2;

fn stream(seed: u64, replication: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 2) | purpose);
    rng
}

fn normals(rng: &mut ChaCha8Rng, count: usize, sd: f64) -> Vec<f64> {
    (0..count).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A generated sample together with the latent index of every estimation-sample row.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: PanelDataset<f64>,
    /// β_y y_{t−1} + β_x x_t + μ_t for each row, in row order.
    pub index: Vec<f64>,
}

/// Draws replication `replication`: rows (i, j, t) for t = 1..T with regressors
/// (y_{t−1}, x_t), stored with 0-based t.
pub fn generate(config: &SimConfig, replication: usize) -> Result<PanelDataset<f64>> {
    generate_detailed(config, replication).map(|g| g.dataset)
}

pub fn generate_detailed(config: &SimConfig, replication: usize) -> Result<Generated> {
    config.validate()?;
    let (n1, n2, t) = (config.n1, config.n2(), config.t());
    let periods = t + 1;
    let mut fe = stream(config.seed, replication, STREAM_FE);
    let sd = config.fe_sd;
    // μ over t' = 0..T
    let mu: Box<dyn Fn(usize, usize, usize) -> f64> = match config.dgp {
        Dgp::I => {
            let alpha = normals(&mut fe, n1 * periods, sd);
            let gamma = normals(&mut fe, n2 * periods, sd);
            let rho = normals(&mut fe, n1 * n2, sd);
            Box::new(move |i, j, s| alpha[i * periods + s] + gamma[j * periods + s] + rho[i * n2 + j])
        }
        Dgp::II => {
            let alpha = normals(&mut fe, n1, sd);
            let gamma = normals(&mut fe, n2, sd);
            let rho = normals(&mut fe, periods, sd);
            Box::new(move |i, j, s| alpha[i] + gamma[j] + rho[s])
        }
    };
    let mut xr = stream(config.seed, replication, STREAM_X);
    let mut ur = stream(config.seed, replication, STREAM_U);
    let mut ds = PanelDataset::new(Structure::Bipartite, n1, n2, t, 2);
    ds.rows.reserve(n1 * n2 * t);
    let mut index = Vec::with_capacity(n1 * n2 * t);
    for i in 0..n1 {
        for j in 0..n2 {
            let mut prev = 0.0;
            for s in 0..periods {
                let m = mu(i, j, s);
                let x = m + xr.sample::<f64, _>(StandardNormal);
                let u: f64 = ur.gen();
                let lag = if s == 0 { 0.0 } else { config.beta_y * prev };
                let idx = lag + config.beta_x * x + m;
                let y = if idx >= (u / (1.0 - u)).ln() { 1.0 } else { 0.0 };
                if s > 0 {
                    ds.push(i, j, s - 1, y, vec![prev, x]);
                    index.push(idx);
                }
                prev = y;
            }
        }
    }
    Ok(Generated { dataset: ds, index })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    Uncorrected,
    Debiased(usize),
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Uncorrected => f.write_str("uncorrected"),
            Estimator::Debiased(h) => write!(f, "debiased_h{h}"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "uncorrected" {
            return Ok(Estimator::Uncorrected);
        }
        s.strip_prefix("debiased_h")
            .and_then(|h| h.parse().ok())
            .map(Estimator::Debiased)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown estimator '{s}'")))
    }
}

impl Estimator {
    fn table_label(self) -> String {
        match self {
            Estimator::Uncorrected => "Uncorrected".into(),
            Estimator::Debiased(h) => format!("Debiased (h = {h})"),
        }
    }
}

/// Coefficient names in regressor order.
pub const COEFFICIENTS: [&str; 2] = ["beta_y", "beta_x"];

/// Point estimates and interval hits of one replication, per estimator and coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub estimates: Vec<[f64; 2]>,
    pub covered: Vec<[bool; 2]>,
    pub dropped: usize,
}

/// Fits one replication and evaluates every estimator of the design.
pub fn run_replication(config: &SimConfig, replication: usize) -> Result<Replication> {
    let ds = generate(config, replication)?;
    let spec = FeSpec::new(config.dgp.spec_id(), Structure::Bipartite)?;
    let panel = validate(&ds, &spec)?;
    let opts = FitOptions { separation: SeparationPolicy::DropLevels, ..FitOptions::default() };
    let fitted = fit(&panel, &spec, Family::Logit, &opts)?;
    let estimators = config.estimators();
    let hs: Vec<usize> = estimators
        .iter()
        .filter_map(|e| match e {
            Estimator::Debiased(h) => Some(*h),
            Estimator::Uncorrected => None,
        })
        .collect();
    let reports = bias_reports(&fitted, if hs.is_empty() { &[0] } else { &hs })?;
    let truth = config.truth();
    let se = &reports[0].se_uncorrected;
    let mut estimates = Vec::with_capacity(estimators.len());
    let mut covered = Vec::with_capacity(estimators.len());
    let mut next_report = reports.iter();
    for e in &estimators {
        let (b, s) = match e {
            Estimator::Uncorrected => (&fitted.beta, se),
            Estimator::Debiased(_) => {
                let r = next_report.next().expect("one report per bandwidth");
                (&r.beta_tilde, &r.se_debiased)
            }
        };
        estimates.push([b[0], b[1]]);
        covered.push([0, 1].map(|k| (b[k] - truth[k]).abs() <= 1.96 * s[k]));
    }
    Ok(Replication { estimates, covered, dropped: fitted.dropped() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub coefficient: String,
    pub bias_pct: f64,
    pub bias_over_sd: f64,
    pub coverage: f64,
    /// Monte Carlo standard error of the coverage, sqrt(p(1−p)/R).
    pub coverage_se: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub dgp: Dgp,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    /// Failure counts by error kind.
    pub failure_kinds: BTreeMap<String, usize>,
    pub rows: Vec<SummaryRow>,
}

impl SimSummary {
    pub fn row(&self, estimator: Estimator, coefficient: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.coefficient == coefficient)
    }
}

fn error_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Unknown").to_string()
}

/// Runs every replication (in parallel on the current rayon pool) and aggregates in
/// replication order, so the summary does not depend on the number of workers.
pub fn run(config: &SimConfig) -> Result<SimSummary> {
    run_with_progress(config, &|_| {})
}

/// As [`run`], calling `progress` with the index of each finished replication.
pub fn run_with_progress(config: &SimConfig, progress: &(dyn Fn(usize) + Sync)) -> Result<SimSummary> {
    config.validate()?;
    let outcomes: Vec<Result<Replication>> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let out = run_replication(config, r);
            progress(r);
            out
        })
        .collect();
    summarize(config, &outcomes)
}

/// Aggregates replication outcomes; failed replications are counted and excluded.
pub fn summarize(config: &SimConfig, outcomes: &[Result<Replication>]) -> Result<SimSummary> {
    let mut failure_kinds = BTreeMap::new();
    let ok: Vec<&Replication> = outcomes
        .iter()
        .filter_map(|o| match o {
            Ok(r) => Some(r),
            Err(e) => {
                *failure_kinds.entry(error_kind(e)).or_insert(0) += 1;
                None
            }
        })
        .collect();
    if ok.is_empty() {
        let detail = outcomes.iter().find_map(|o| o.as_ref().err()).map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Simulation(format!("all {} replications failed; first error: {detail}", outcomes.len())));
    }
    let truth = config.truth();
    let r = ok.len() as f64;
    let mut rows = Vec::new();
    for (e_idx, est) in config.estimators().into_iter().enumerate() {
        for (k, name) in COEFFICIENTS.iter().enumerate() {
            let vals: Vec<f64> = ok.iter().map(|rep| rep.estimates[e_idx][k]).collect();
            let mean = vals.iter().sum::<f64>() / r;
            let bias = mean - truth[k];
            let sd = if ok.len() > 1 {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let coverage = ok.iter().filter(|rep| rep.covered[e_idx][k]).count() as f64 / r;
            rows.push(SummaryRow {
                estimator: est,
                coefficient: (*name).to_string(),
                bias_pct: 100.0 * bias / truth[k],
                bias_over_sd: bias / sd,
                coverage,
                coverage_se: (coverage * (1.0 - coverage) / r).sqrt(),
                mean_abs_error: vals.iter().map(|v| (v - truth[k]).abs()).sum::<f64>() / r,
            });
        }
    }
    Ok(SimSummary {
        dgp: config.dgp,
        n1: config.n1,
        n2: config.n2(),
        t: config.t(),
        replications: outcomes.len(),
        successes: ok.len(),
        failures: outcomes.len() - ok.len(),
        failure_kinds,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            _ => Err(Error::InvalidConfig(format!("unknown table format '{s}'"))),
        }
    }
}

const NON_INTERACTED_NOTE: &str =
    "specification 3.a is non-interacted: no bias correction applies, only the uncorrected estimator is reported";

const CSV_HEADER: [&str; 14] = [
    "dgp",
    "n1",
    "n2",
    "t",
    "replications",
    "failures",
    "estimator",
    "coefficient",
    "bias_pct",
    "bias_over_sd",
    "coverage",
    "coverage_se",
    "mean_abs_error",
    "successes",
];

pub fn summarize_to_table(summary: &SimSummary, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => to_csv(summary),
        TableFormat::Markdown => to_markdown(summary),
    }
}

fn to_csv(s: &SimSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &s.rows {
        w.write_record([
            s.dgp.to_string(),
            s.n1.to_string(),
            s.n2.to_string(),
            s.t.to_string(),
            s.replications.to_string(),
            s.failures.to_string(),
            r.estimator.to_string(),
            r.coefficient.clone(),
            r.bias_pct.to_string(),
            r.bias_over_sd.to_string(),
            r.coverage.to_string(),
            r.coverage_se.to_string(),
            r.mean_abs_error.to_string(),
            s.successes.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    let mut out = String::new();
    if s.dgp == Dgp::II {
        let _ = writeln!(out, "# {NON_INTERACTED_NOTE}");
    }
    if !s.failure_kinds.is_empty() {
        let kinds: Vec<String> = s.failure_kinds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "# failures: {}", kinds.join(" "));
    }
    out + &body
}

fn to_markdown(s: &SimSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "DGP {} (N1 = {}, N2 = {}, T = {}); {} of {} replications succeeded\n",
        s.dgp, s.n1, s.n2, s.t, s.successes, s.replications
    );
    let _ = writeln!(
        out,
        "| Estimator | beta_x Bias (%) | beta_x Bias/SD | beta_x Coverage | beta_y Bias (%) | beta_y Bias/SD | beta_y Coverage |"
    );
    let _ = writeln!(out, "|---|---:|---:|---:|---:|---:|---:|");
    let mut estimators: Vec<Estimator> = s.rows.iter().map(|r| r.estimator).collect();
    estimators.dedup();
    for e in estimators {
        let cell = |c: &str| {
            s.row(e, c)
                .map(|r| format!("{:.3} | {:.3} | {:.3}", r.bias_pct, r.bias_over_sd, r.coverage))
                .unwrap_or_else(|| "- | - | -".into())
        };
        let _ = writeln!(out, "| {} | {} | {} |", e.table_label(), cell("beta_x"), cell("beta_y"));
    }
    if s.dgp == Dgp::II {
        let _ = writeln!(out, "\nNote: {NON_INTERACTED_NOTE}.");
    }
    if !s.failure_kinds.is_empty() {
        let kinds: Vec<String> = s.failure_kinds.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let _ = writeln!(out, "\nFailed replications: {}.", kinds.join(", "));
    }
    out
}

/// Reads a summary back from its CSV form.
pub fn parse_summary_csv(text: &str) -> Result<SimSummary> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let bad = |row: usize, m: String| Error::MalformedRow { row, message: m };
    let mut summary: Option<SimSummary> = None;
    let mut failure_kinds = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# failures: ") {
            for kv in rest.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    failure_kinds.insert(k.to_string(), v.parse().unwrap_or(0));
                }
            }
        }
    }
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| bad(row, e.to_string()))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(row, format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let int = |i: usize| rec[i].parse::<usize>().map_err(|e| bad(row, format!("{}: {e}", CSV_HEADER[i])));
        let real = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(row, format!("{}: {e}", CSV_HEADER[i])));
        let s = summary.get_or_insert(SimSummary {
            dgp: rec[0].parse()?,
            n1: int(1)?,
            n2: int(2)?,
            t: int(3)?,
            replications: int(4)?,
            successes: int(13)?,
            failures: int(5)?,
            failure_kinds: failure_kinds.clone(),
            rows: Vec::new(),
        });
        s.rows.push(SummaryRow {
            estimator: rec[6].parse()?,
            coefficient: rec[7].to_string(),
            bias_pct: real(8)?,
            bias_over_sd: real(9)?,
            coverage: real(10)?,
            coverage_se: real(11)?,
            mean_abs_error: real(12)?,
        });
    }
    summary.ok_or_else(|| bad(1, "no summary rows".into()))
}
