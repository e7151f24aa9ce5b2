//! Files written by the commands, with their readers.
//!
//! CSV files start with `# key=value` metadata lines; floats are written with
//! 17 significant digits so every value reads back bit-exactly.

use crate::error::{CliError, Result};
use covsteer::solver::{InnerRecord, OuterRecord};
use covsteer::{ControlLaw, SolveReport};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Artifact(format!("{what}: cannot read number {s:?}")))
}

/// JSON numbers for finite values; `"NaN"`, `"inf"` and `"-inf"` otherwise.
pub mod real {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `Option<f64>` with the conventions of [`real`].
pub mod opt_real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match x {
            Some(v) => real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "real")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub type Meta = BTreeMap<String, String>;

fn split_meta(text: &str) -> (Meta, String) {
    let mut meta = Meta::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(rest) => {
                if let Some((k, v)) = rest.trim_start().split_once('=') {
                    meta.insert(k.trim().to_string(), v.to_string());
                }
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    (meta, body)
}

fn write_with_meta(path: &Path, meta: &Meta, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Artifact(e.to_string()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn read_with_meta(path: &Path) -> Result<(Meta, Vec<String>, Vec<csv::StringRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (meta, body) = split_meta(&text);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<_, _>>()?;
    Ok((meta, header, rows))
}

fn check_kind(meta: &Meta, kind: &str, path: &Path) -> Result<()> {
    if meta.get("kind").map(String::as_str) != Some(kind) {
        return Err(CliError::Artifact(format!("{}: not a {kind} file", path.display())));
    }
    if meta.get("format_version").map(String::as_str) != Some("1") {
        return Err(CliError::Artifact(format!(
            "{}: unsupported format_version",
            path.display()
        )));
    }
    Ok(())
}

/// Per-step mean, covariance and control law of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryArtifact {
    pub scenario_sha256: String,
    pub method: String,
    pub status: String,
    pub objective: f64,
    /// Resolved solver configuration as compact JSON.
    pub config: String,
    /// `t_f + 1` entries.
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    /// `t_f` entries.
    pub v: Vec<DVector<f64>>,
    pub k: Vec<DMatrix<f64>>,
}

impl TrajectoryArtifact {
    pub fn from_report(report: &SolveReport, scenario_sha256: &str, config: &str) -> Self {
        Self {
            scenario_sha256: scenario_sha256.to_string(),
            method: method_name(report).to_string(),
            status: report.status.as_str().to_string(),
            objective: report.objective,
            config: config.to_string(),
            mean: report.mean_traj.clone(),
            cov: report.cov_traj.clone(),
            v: report.law.v.clone(),
            k: report.law.k.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    pub fn law(&self) -> ControlLaw {
        ControlLaw {
            v: self.v.clone(),
            k: self.k.clone(),
            ref_mean: self.mean[..self.horizon()].to_vec(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.mean.first().map_or(0, |x| x.len());
        let m = self.v.first().map_or(0, |v| v.len());
        let tf = self.horizon();
        let meta: Meta = [
            ("format_version", FORMAT_VERSION.to_string()),
            ("kind", "trajectory".to_string()),
            ("version", VERSION.to_string()),
            ("scenario_sha256", self.scenario_sha256.clone()),
            ("method", self.method.clone()),
            ("status", self.status.clone()),
            ("objective", fmt_f64(self.objective)),
            ("config", self.config.clone()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("mu_{i}")));
        header.extend((0..n).flat_map(|i| (0..n).map(move |j| format!("sigma_{i}_{j}"))));
        header.extend((0..m).map(|i| format!("v_{i}")));
        header.extend((0..m).flat_map(|i| (0..n).map(move |j| format!("k_{i}_{j}"))));
        let rows: Vec<Vec<String>> = (0..=tf)
            .map(|t| {
                let mut row = vec![t.to_string()];
                row.extend(self.mean[t].iter().map(|&x| fmt_f64(x)));
                row.extend(
                    (0..n)
                        .flat_map(|i| (0..n).map(move |j| (i, j)))
                        .map(|(i, j)| fmt_f64(self.cov[t][(i, j)])),
                );
                if t < tf {
                    row.extend(self.v[t].iter().map(|&x| fmt_f64(x)));
                    row.extend(
                        (0..m)
                            .flat_map(|i| (0..n).map(move |j| (i, j)))
                            .map(|(i, j)| fmt_f64(self.k[t][(i, j)])),
                    );
                } else {
                    row.extend(std::iter::repeat_n(String::new(), m + m * n));
                }
                row
            })
            .collect();
        write_with_meta(path, &meta, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (meta, header, rows) = read_with_meta(path)?;
        check_kind(&meta, "trajectory", path)?;
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n, m) = (count("mu_"), count("v_"));
        if header.len() != 1 + n + n * n + m + m * n || count("sigma_") != n * n || count("k_") != m * n {
            return Err(CliError::Artifact(format!(
                "{}: malformed trajectory header",
                path.display()
            )));
        }
        if rows.is_empty() {
            return Err(CliError::Artifact(format!("{}: no rows", path.display())));
        }
        let tf = rows.len() - 1;
        let what = path.display().to_string();
        let mut out = Self {
            scenario_sha256: meta.get("scenario_sha256").cloned().unwrap_or_default(),
            method: meta.get("method").cloned().unwrap_or_default(),
            status: meta.get("status").cloned().unwrap_or_default(),
            objective: parse_f64(meta.get("objective").map_or("NaN", String::as_str), &what)?,
            config: meta.get("config").cloned().unwrap_or_default(),
            mean: Vec::with_capacity(tf + 1),
            cov: Vec::with_capacity(tf + 1),
            v: Vec::with_capacity(tf),
            k: Vec::with_capacity(tf),
        };
        for (t, row) in rows.iter().enumerate() {
            if row.len() != header.len() || row.get(0) != Some(t.to_string().as_str()) {
                return Err(CliError::Artifact(format!("{what}: row {t} is malformed")));
            }
            let cells: Vec<&str> = row.iter().skip(1).collect();
            let num = |s: &str| parse_f64(s, &what);
            out.mean.push(DVector::from_iterator(
                n,
                cells[..n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
            ));
            out.cov.push(DMatrix::from_row_iterator(
                n,
                n,
                cells[n..n + n * n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
            ));
            let ctrl = &cells[n + n * n..];
            if t < tf {
                out.v.push(DVector::from_iterator(
                    m,
                    ctrl[..m].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
                ));
                out.k.push(DMatrix::from_row_iterator(
                    m,
                    n,
                    ctrl[m..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?,
                ));
            } else if ctrl.iter().any(|s| !s.is_empty()) {
                return Err(CliError::Artifact(format!("{what}: the last row carries no control")));
            }
        }
        Ok(out)
    }
}

pub fn method_name(report: &SolveReport) -> &'static str {
    match report.method {
        covsteer::Method::Admm => "admm",
        covsteer::Method::Baseline => "baseline",
    }
}

/// One inner iteration of the residual history; outer iterations whose
/// local problem failed appear once with empty inner columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub outer: usize,
    pub inner: Option<usize>,
    pub primal: Option<f64>,
    pub dual: Option<f64>,
    pub chance_violation: Option<f64>,
    pub cov_relaxed: Option<bool>,
    pub dykstra_converged: Option<bool>,
    pub trust_region: f64,
    pub constraint_residual: f64,
    pub objective: f64,
    pub failure: Option<String>,
}

pub fn residual_rows(history: &[OuterRecord<f64>]) -> Vec<ResidualRow> {
    let mut rows = Vec::new();
    for (o, rec) in history.iter().enumerate() {
        let base = ResidualRow {
            outer: o,
            inner: None,
            primal: None,
            dual: None,
            chance_violation: None,
            cov_relaxed: None,
            dykstra_converged: None,
            trust_region: rec.trust_region,
            constraint_residual: rec.constraint_residual,
            objective: rec.objective,
            failure: rec.failure.clone(),
        };
        if rec.inner.is_empty() {
            rows.push(base);
            continue;
        }
        for (i, r) in rec.inner.iter().enumerate() {
            rows.push(ResidualRow {
                inner: Some(i),
                primal: Some(r.primal),
                dual: Some(r.dual),
                chance_violation: Some(r.chance_violation),
                cov_relaxed: Some(r.cov_relaxed),
                dykstra_converged: Some(r.dykstra_converged),
                ..base.clone()
            });
        }
    }
    rows
}

const RESIDUAL_HEADER: [&str; 11] = [
    "outer",
    "inner",
    "primal",
    "dual",
    "chance_violation",
    "cov_relaxed",
    "dykstra_converged",
    "trust_region",
    "constraint_residual",
    "objective",
    "failure",
];

pub fn write_residuals(path: &Path, scenario_sha256: &str, rows: &[ResidualRow]) -> Result<()> {
    let meta: Meta = [
        ("format_version", FORMAT_VERSION.to_string()),
        ("kind", "residuals".to_string()),
        ("version", VERSION.to_string()),
        ("scenario_sha256", scenario_sha256.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let flag = |x: Option<bool>| x.map(|b| b.to_string()).unwrap_or_default();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.outer.to_string(),
                r.inner.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.primal),
                opt(r.dual),
                opt(r.chance_violation),
                flag(r.cov_relaxed),
                flag(r.dykstra_converged),
                fmt_f64(r.trust_region),
                fmt_f64(r.constraint_residual),
                fmt_f64(r.objective),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let header: Vec<String> = RESIDUAL_HEADER.iter().map(|s| s.to_string()).collect();
    write_with_meta(path, &meta, &header, &cells)
}

pub fn read_residuals(path: &Path) -> Result<Vec<ResidualRow>> {
    let (meta, header, rows) = read_with_meta(path)?;
    check_kind(&meta, "residuals", path)?;
    let header = csv::StringRecord::from(header);
    rows.iter()
        .map(|r| r.deserialize(Some(&header)).map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerDoc {
    #[serde(with = "real")]
    pub primal: f64,
    #[serde(with = "real")]
    pub dual: f64,
    #[serde(with = "real")]
    pub chance_violation: f64,
    pub cov_relaxed: bool,
    pub dykstra_converged: bool,
}

impl From<&InnerRecord<f64>> for InnerDoc {
    fn from(r: &InnerRecord<f64>) -> Self {
        Self {
            primal: r.primal,
            dual: r.dual,
            chance_violation: r.chance_violation,
            cov_relaxed: r.cov_relaxed,
            dykstra_converged: r.dykstra_converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterDoc {
    #[serde(with = "real")]
    pub trust_region: f64,
    #[serde(with = "real")]
    pub constraint_residual: f64,
    #[serde(with = "real")]
    pub objective: f64,
    pub failure: Option<String>,
    pub inner: Vec<InnerDoc>,
}

/// JSON form of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportDoc {
    pub format_version: u32,
    pub kind: String,
    pub version: String,
    pub scenario: Option<String>,
    pub scenario_sha256: String,
    pub method: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(with = "real")]
    pub objective: f64,
    #[serde(with = "real")]
    pub constraint_residual: f64,
    pub outer_iterations: usize,
    pub message: Option<String>,
    pub seed: u64,
    pub config: crate::spec::SolverSpec,
    pub history: Vec<OuterDoc>,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time: f64,
}

impl SolveReportDoc {
    pub fn new(
        report: &SolveReport,
        scenario: Option<String>,
        scenario_sha256: &str,
        config: crate::spec::SolverSpec,
        seed: u64,
        exit_code: i32,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: "solve_report".into(),
            version: VERSION.into(),
            scenario,
            scenario_sha256: scenario_sha256.into(),
            method: method_name(report).into(),
            status: report.status.as_str().into(),
            exit_code,
            objective: report.objective,
            constraint_residual: report.constraint_residual,
            outer_iterations: report.outer_iterations(),
            message: report.message.clone(),
            seed,
            config,
            history: report
                .history
                .iter()
                .map(|h| OuterDoc {
                    trust_region: h.trust_region,
                    constraint_residual: h.constraint_residual,
                    objective: h.objective,
                    failure: h.failure.clone(),
                    inner: h.inner.iter().map(InnerDoc::from).collect(),
                })
                .collect(),
            wall_time: report.wall_time,
        }
    }
}

/// JSON form of a Monte-Carlo evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloDoc {
    pub format_version: u32,
    pub kind: String,
    pub version: String,
    pub scenario_sha256: String,
    pub law_scenario_sha256: String,
    pub n_trials: usize,
    pub seed: u64,
    pub safe_count: usize,
    #[serde(with = "real")]
    pub safety_prob: f64,
    pub numeric_failures: usize,
    #[serde(with = "real")]
    pub est_cost: f64,
    #[serde(with = "real")]
    pub cost_std_err: f64,
    #[serde(with = "opt_real")]
    pub optimizer_cost: Option<f64>,
    #[serde(with = "opt_real")]
    pub cost_gap: Option<f64>,
    /// Designed joint safety `1 − δ`.
    #[serde(with = "real")]
    pub specified_safety: f64,
    #[serde(with = "real")]
    pub delta: f64,
    #[serde(with = "real")]
    pub delta_prime: f64,
}

/// One row of the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub safe: bool,
    pub numeric_failure: bool,
    pub cost: f64,
    pub min_distance: f64,
}

pub fn write_trials(path: &Path, scenario_sha256: &str, seed: u64, rows: &[TrialRow]) -> Result<()> {
    let meta: Meta = [
        ("format_version", FORMAT_VERSION.to_string()),
        ("kind", "trials".to_string()),
        ("version", VERSION.to_string()),
        ("scenario_sha256", scenario_sha256.to_string()),
        ("seed", seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let header: Vec<String> = ["trial", "safe", "numeric_failure", "cost", "min_distance"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.trial.to_string(),
                r.safe.to_string(),
                r.numeric_failure.to_string(),
                fmt_f64(r.cost),
                fmt_f64(r.min_distance),
            ]
        })
        .collect();
    write_with_meta(path, &meta, &header, &cells)
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let (meta, header, rows) = read_with_meta(path)?;
    check_kind(&meta, "trials", path)?;
    let header = csv::StringRecord::from(header);
    rows.iter()
        .map(|r| r.deserialize(Some(&header)).map_err(CliError::from))
        .collect()
}

/// Closed-loop sample paths for plotting: one row per `(trial, t)`, inputs
/// empty on the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub trials: Vec<(usize, covsteer::eval::SampledTrajectory<f64>)>,
}

impl SampleSet {
    pub fn write(&self, path: &Path, scenario_sha256: &str, seed: u64) -> Result<()> {
        let meta: Meta = [
            ("format_version", FORMAT_VERSION.to_string()),
            ("kind", "samples".to_string()),
            ("version", VERSION.to_string()),
            ("scenario_sha256", scenario_sha256.to_string()),
            ("seed", seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let (n, m) = self
            .trials
            .first()
            .map_or((0, 0), |(_, s)| (s.x[0].len(), s.u.first().map_or(0, |u| u.len())));
        let mut header = vec!["trial".to_string(), "t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        let mut rows = Vec::new();
        for (trial, s) in &self.trials {
            for (t, x) in s.x.iter().enumerate() {
                let mut row = vec![trial.to_string(), t.to_string()];
                row.extend(x.iter().map(|&v| fmt_f64(v)));
                match s.u.get(t) {
                    Some(u) => row.extend(u.iter().map(|&v| fmt_f64(v))),
                    None => row.extend(std::iter::repeat_n(String::new(), m)),
                }
                rows.push(row);
            }
        }
        write_with_meta(path, &meta, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (meta, header, rows) = read_with_meta(path)?;
        check_kind(&meta, "samples", path)?;
        let n = header.iter().filter(|h| h.starts_with("x_")).count();
        let m = header.iter().filter(|h| h.starts_with("u_")).count();
        let what = path.display().to_string();
        let mut trials: Vec<(usize, covsteer::eval::SampledTrajectory<f64>)> = Vec::new();
        for row in &rows {
            let trial: usize = row[0]
                .parse()
                .map_err(|_| CliError::Artifact(format!("{what}: bad trial index")))?;
            if trials.last().is_none_or(|(k, _)| *k != trial) {
                trials.push((trial, covsteer::eval::SampledTrajectory { x: vec![], u: vec![] }));
            }
            let s = &mut trials.last_mut().expect("just pushed").1;
            let cells: Vec<&str> = row.iter().skip(2).collect();
            let x = cells[..n]
                .iter()
                .map(|c| parse_f64(c, &what))
                .collect::<Result<Vec<_>>>()?;
            s.x.push(DVector::from_vec(x));
            if cells[n..].iter().all(|c| !c.is_empty()) && m > 0 {
                let u = cells[n..]
                    .iter()
                    .map(|c| parse_f64(c, &what))
                    .collect::<Result<Vec<_>>>()?;
                s.u.push(DVector::from_vec(u));
            }
        }
        Ok(Self { trials })
    }
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
