//! The `solve`, `eval` and `study` commands.

use crate::artifact::{
    residual_rows, write_json, write_residuals, write_trials, MonteCarloDoc, SampleSet, SolveReportDoc,
    TrajectoryArtifact, TrialRow, FORMAT_VERSION, VERSION,
};
use crate::error::{CliError, Exit, Result};
use crate::spec::{load_scenario, Averaging, Convention, ScenarioSpec, SolverSpec};
use covsteer::eval::{cost_gap, evaluate, simulate_trial};
use covsteer::noise::{keyed_rng, standard_normal};
use covsteer::solver::{initial_guess, outer_solve, InitMode};
use covsteer::{Method, Scenario, SolveReport, SolverConfig, Status};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const REPORT_FILE: &str = "report.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const STUDY_FILE: &str = "study.json";
pub const STUDY_TABLE: &str = "study.csv";

/// Command-line overrides of scenario fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub inner_iters: Option<usize>,
    pub outer_iters: Option<usize>,
    pub rho: Option<f64>,
    pub averaging: Option<Averaging>,
    /// Reinterprets the scenario's risk value under this convention.
    pub delta_convention: Option<Convention>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut ScenarioSpec) {
        let s = &mut spec.solver;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        s.inner_iters = self.inner_iters.or(s.inner_iters);
        s.outer_iters = self.outer_iters.or(s.outer_iters);
        s.rho = self.rho.or(s.rho);
        s.averaging = self.averaging.or(s.averaging);
        if let Some(c) = self.delta_convention {
            spec.risk.convention = c;
        }
    }
}

/// A scenario document with overrides applied, built and hashed.
pub struct Loaded {
    pub spec: ScenarioSpec,
    pub scenario: Scenario,
    pub config: SolverConfig,
    pub sha256: String,
}

impl Loaded {
    pub fn from_spec(spec: ScenarioSpec) -> Result<Self> {
        let scenario = spec.build()?;
        let config = spec.solver_config()?;
        let sha256 = spec.sha256();
        Ok(Self {
            spec,
            scenario,
            config,
            sha256,
        })
    }

    pub fn open(path: &Path, overrides: &Overrides, lax: bool) -> Result<Self> {
        let (mut spec, warnings) = load_scenario(path, lax)?;
        for w in warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        overrides.apply(&mut spec);
        Self::from_spec(spec)
    }
}

/// Converged, or out of iterations with every linearized constraint
/// satisfied to the outer tolerance, counts as success.
pub fn solve_exit(report: &SolveReport, cfg: &SolverConfig) -> Exit {
    match report.status {
        Status::Converged => Exit::Success,
        Status::MaxIters if report.constraint_residual <= cfg.outer_tol => Exit::Success,
        Status::MaxIters | Status::Infeasible => Exit::Infeasible,
        Status::Numeric => Exit::Numeric,
    }
}

pub fn run_solve(loaded: &Loaded, method: Method) -> Result<(SolveReport, Exit)> {
    let tau = initial_guess(&loaded.scenario, InitMode::StraightLine)?;
    let report = outer_solve(&loaded.scenario, &loaded.config, &tau, method)?;
    let exit = solve_exit(&report, &loaded.config);
    Ok((report, exit))
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

pub fn write_solve(out: &Path, loaded: &Loaded, report: &SolveReport, exit: Exit) -> Result<SolveReportDoc> {
    create_dir(out)?;
    let config = SolverSpec::resolved(&loaded.config);
    let config_json = serde_json::to_string(&config)?;
    let doc = SolveReportDoc::new(
        report,
        loaded.spec.name.clone(),
        &loaded.sha256,
        config,
        loaded.spec.seed,
        exit.code(),
    );
    write_json(&out.join(REPORT_FILE), &doc)?;
    TrajectoryArtifact::from_report(report, &loaded.sha256, &config_json).write(&out.join(TRAJECTORY_FILE))?;
    write_residuals(
        &out.join(RESIDUALS_FILE),
        &loaded.sha256,
        &residual_rows(&report.history),
    )?;
    Ok(doc)
}

fn report_errors(result: Result<Exit>) -> Exit {
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit()
    })
}

pub fn cmd_solve(scenario: &Path, overrides: &Overrides, out: &Path, baseline: bool, lax: bool) -> Exit {
    report_errors((|| {
        let loaded = Loaded::open(scenario, overrides, lax)?;
        let method = if baseline { Method::Baseline } else { Method::Admm };
        let (report, exit) = run_solve(&loaded, method)?;
        write_solve(out, &loaded, &report, exit)?;
        eprintln!(
            "{}: status {} after {} outer iterations, objective {}, constraint residual {:e}",
            if baseline { "baseline" } else { "admm" },
            report.status.as_str(),
            report.outer_iterations(),
            report.objective,
            report.constraint_residual
        );
        if let Some(msg) = &report.message {
            eprintln!("  {msg}");
        }
        Ok(exit)
    })())
}

/// Monte-Carlo evaluation of `law` on the loaded scenario.
pub fn run_eval(loaded: &Loaded, law: &TrajectoryArtifact, n_trials: usize) -> Result<(MonteCarloDoc, Vec<TrialRow>)> {
    let scenario = &loaded.scenario;
    let (n, m, tf) = (scenario.state_dim(), scenario.control_dim(), scenario.horizon);
    let law_n = law.mean.first().map_or(0, |x| x.len());
    let law_m = law.v.first().map_or(0, |v| v.len());
    if (law_n, law_m, law.horizon()) != (n, m, tf) {
        return Err(CliError::Mismatch(format!(
            "law has n = {law_n}, m = {law_m}, t_f = {}; scenario has n = {n}, m = {m}, t_f = {tf}",
            law.horizon()
        )));
    }
    if n_trials == 0 {
        return Err(CliError::spec("", "at least one trial is required"));
    }
    let seed = loaded.spec.seed;
    let mc = evaluate(scenario, &law.law(), n_trials, seed).map_err(|e| match e {
        covsteer::Error::Dimension(msg) => CliError::Mismatch(msg),
        other => other.into(),
    })?;
    let optimizer_cost = law.objective.is_finite().then_some(law.objective);
    let doc = MonteCarloDoc {
        format_version: FORMAT_VERSION,
        kind: "monte_carlo_report".into(),
        version: VERSION.into(),
        scenario_sha256: loaded.sha256.clone(),
        law_scenario_sha256: law.scenario_sha256.clone(),
        n_trials,
        seed,
        safe_count: mc.safe_count,
        safety_prob: mc.safety_prob,
        numeric_failures: mc.numeric_failures,
        est_cost: mc.est_cost,
        cost_std_err: mc.cost_std_err,
        optimizer_cost,
        cost_gap: optimizer_cost.map(|opt| cost_gap(opt, mc.est_cost)),
        specified_safety: mc.specified_safety,
        delta: scenario.budget.delta,
        delta_prime: scenario.budget.delta_prime,
    };
    let rows = mc
        .per_trial
        .iter()
        .enumerate()
        .map(|(trial, o)| TrialRow {
            trial,
            safe: o.safe,
            numeric_failure: o.numeric_failure,
            cost: o.cost,
            min_distance: o.min_distance,
        })
        .collect();
    Ok((doc, rows))
}

/// The first `count` trials of the evaluation; diverged ones are skipped.
pub fn sample_paths(loaded: &Loaded, law: &TrajectoryArtifact, count: usize) -> Result<SampleSet> {
    let law = law.law();
    let mut trials = Vec::new();
    for trial in 0..count {
        match simulate_trial(&loaded.scenario, &law, loaded.spec.seed, trial as u64) {
            Ok(s) => trials.push((trial, s)),
            Err(covsteer::Error::Divergence { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(SampleSet { trials })
}

pub struct EvalOptions {
    pub trials: usize,
    pub samples: usize,
}

pub fn cmd_eval(scenario: &Path, law: &Path, opts: &EvalOptions, overrides: &Overrides, out: &Path, lax: bool) -> Exit {
    report_errors((|| {
        let loaded = Loaded::open(scenario, overrides, lax)?;
        let art = TrajectoryArtifact::read(law)?;
        if art.scenario_sha256 != loaded.sha256 {
            eprintln!("warning: the law was computed for a different scenario document");
        }
        let (doc, rows) = run_eval(&loaded, &art, opts.trials)?;
        let samples = sample_paths(&loaded, &art, opts.samples.min(opts.trials))?;
        create_dir(out)?;
        write_json(&out.join(REPORT_FILE), &doc)?;
        write_trials(&out.join(TRIALS_FILE), &loaded.sha256, doc.seed, &rows)?;
        samples.write(&out.join(SAMPLES_FILE), &loaded.sha256, doc.seed)?;
        eprintln!(
            "safety {} ({} of {}), estimated cost {} ± {}, optimizer cost {}",
            doc.safety_prob,
            doc.safe_count,
            doc.n_trials,
            doc.est_cost,
            doc.cost_std_err,
            doc.optimizer_cost.map_or("n/a".into(), |c| c.to_string())
        );
        Ok(Exit::Success)
    })())
}

/// Gaussian perturbation of the obstacles: ball centers and halfspace
/// offsets by `center_std`, radii by `radius_std` (kept at least a tenth of
/// the original).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub center_std: f64,
    pub radius_std: f64,
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        self.center_std == 0.0 && self.radius_std == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_std >= 0.0 && self.radius_std >= 0.0)
            || !self.center_std.is_finite()
            || !self.radius_std.is_finite()
        {
            return Err(CliError::spec(
                "",
                "perturbation standard deviations must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

const STUDY_STREAM: u64 = 0x5354_5544_5900_0000;

/// Environment `env` of a study; identical for a fixed seed.
pub fn perturbed_scenario(base: &ScenarioSpec, p: &Perturbation, env: usize) -> ScenarioSpec {
    let mut spec = base.clone();
    if p.is_zero() {
        return spec;
    }
    let mut rng = keyed_rng(base.seed, STUDY_STREAM + env as u64, 0);
    for obs in &mut spec.obstacles {
        if let Some(c) = &mut obs.center {
            let d = standard_normal::<f64>(&mut rng, c.len());
            c.iter_mut().zip(d.iter()).for_each(|(x, dx)| *x += p.center_std * dx);
        }
        if let Some(r) = &mut obs.radius {
            let d = standard_normal::<f64>(&mut rng, 1)[0];
            *r = (*r + p.radius_std * d).max(0.1 * *r);
        }
        if let (Some(normal), Some(offset)) = (&obs.normal, &mut obs.offset) {
            let d = standard_normal::<f64>(&mut rng, 1)[0];
            let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            *offset += p.center_std * d * len;
        }
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRow {
    pub env: usize,
    pub scenario_sha256: String,
    pub status: String,
    pub exit_code: i32,
    #[serde(with = "crate::artifact::opt_real")]
    pub objective: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub constraint_residual: Option<f64>,
    pub outer_iterations: usize,
    #[serde(with = "crate::artifact::opt_real")]
    pub safety_prob: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub est_cost: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub cost_gap: Option<f64>,
    pub error: Option<String>,
    pub wall_time: f64,
}

/// Averages over the environments whose solve succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub n_succeeded: usize,
    #[serde(with = "crate::artifact::opt_real")]
    pub objective: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub safety_prob: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub est_cost: Option<f64>,
    #[serde(with = "crate::artifact::opt_real")]
    pub cost_gap: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDoc {
    pub format_version: u32,
    pub kind: String,
    pub version: String,
    pub scenario_sha256: String,
    pub n_envs: usize,
    pub n_trials: usize,
    pub seed: u64,
    pub perturbation: Perturbation,
    pub envs: Vec<EnvRow>,
    pub mean: MeanRow,
}

fn run_env(spec: ScenarioSpec, env: usize, n_trials: usize) -> EnvRow {
    let start = std::time::Instant::now();
    let mut row = EnvRow {
        env,
        scenario_sha256: spec.sha256(),
        status: "error".into(),
        exit_code: Exit::BadInput.code(),
        objective: None,
        constraint_residual: None,
        outer_iterations: 0,
        safety_prob: None,
        est_cost: None,
        cost_gap: None,
        error: None,
        wall_time: 0.0,
    };
    let result = (|| {
        let loaded = Loaded::from_spec(spec)?;
        let (report, exit) = run_solve(&loaded, Method::Admm)?;
        row.status = report.status.as_str().into();
        row.exit_code = exit.code();
        row.outer_iterations = report.outer_iterations();
        row.objective = report.objective.is_finite().then_some(report.objective);
        row.constraint_residual = report
            .constraint_residual
            .is_finite()
            .then_some(report.constraint_residual);
        if report.objective.is_finite() {
            let art = TrajectoryArtifact::from_report(&report, &loaded.sha256, "");
            let (doc, _) = run_eval(&loaded, &art, n_trials)?;
            row.safety_prob = Some(doc.safety_prob);
            row.est_cost = Some(doc.est_cost);
            row.cost_gap = doc.cost_gap;
        }
        Ok::<_, CliError>(())
    })();
    if let Err(e) = result {
        row.exit_code = e.exit().code();
        row.error = Some(e.to_string());
    }
    row.wall_time = start.elapsed().as_secs_f64();
    row
}

fn mean_of(rows: &[&EnvRow], f: impl Fn(&EnvRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn run_study(base: &ScenarioSpec, n_envs: usize, n_trials: usize, p: &Perturbation) -> Result<StudyDoc> {
    p.validate()?;
    if n_envs == 0 || n_trials == 0 {
        return Err(CliError::spec(
            "",
            "a study needs at least one environment and one trial",
        ));
    }
    // reject a broken base document up front rather than once per environment
    Loaded::from_spec(base.clone())?;
    let envs: Vec<EnvRow> = (0..n_envs)
        .into_par_iter()
        .map(|env| run_env(perturbed_scenario(base, p, env), env, n_trials))
        .collect();
    let ok: Vec<&EnvRow> = envs.iter().filter(|r| r.exit_code == Exit::Success.code()).collect();
    let mean = MeanRow {
        n_succeeded: ok.len(),
        objective: mean_of(&ok, |r| r.objective),
        safety_prob: mean_of(&ok, |r| r.safety_prob),
        est_cost: mean_of(&ok, |r| r.est_cost),
        cost_gap: mean_of(&ok, |r| r.cost_gap),
        wall_time: envs.iter().map(|r| r.wall_time).sum::<f64>() / n_envs as f64,
    };
    Ok(StudyDoc {
        format_version: FORMAT_VERSION,
        kind: "study_report".into(),
        version: VERSION.into(),
        scenario_sha256: base.sha256(),
        n_envs,
        n_trials,
        seed: base.seed,
        perturbation: *p,
        envs,
        mean,
    })
}

fn write_study_table(path: &Path, doc: &StudyDoc) -> Result<()> {
    let cell = |x: Option<f64>| x.map(crate::artifact::fmt_f64).unwrap_or_default();
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
    w.write_record([
        "env",
        "status",
        "exit_code",
        "objective",
        "safety_prob",
        "est_cost",
        "cost_gap",
        "wall_time",
    ])?;
    for r in &doc.envs {
        w.write_record([
            r.env.to_string(),
            r.status.clone(),
            r.exit_code.to_string(),
            cell(r.objective),
            cell(r.safety_prob),
            cell(r.est_cost),
            cell(r.cost_gap),
            crate::artifact::fmt_f64(r.wall_time),
        ])?;
    }
    let m = &doc.mean;
    w.write_record([
        "mean".to_string(),
        format!("{}/{}", m.n_succeeded, doc.n_envs),
        String::new(),
        cell(m.objective),
        cell(m.safety_prob),
        cell(m.est_cost),
        cell(m.cost_gap),
        crate::artifact::fmt_f64(m.wall_time),
    ])?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub struct StudyOptions {
    pub n_envs: usize,
    pub trials: usize,
    pub perturbation: Perturbation,
}

pub fn cmd_study(scenario: &Path, opts: &StudyOptions, overrides: &Overrides, out: &Path, lax: bool) -> Exit {
    report_errors((|| {
        let (mut spec, warnings) = load_scenario(scenario, lax)?;
        for w in warnings {
            eprintln!("warning: {}: {w}", scenario.display());
        }
        overrides.apply(&mut spec);
        let doc = run_study(&spec, opts.n_envs, opts.trials, &opts.perturbation)?;
        create_dir(out)?;
        write_json(&out.join(STUDY_FILE), &doc)?;
        write_study_table(&out.join(STUDY_TABLE), &doc)?;
        for r in &doc.envs {
            if let Some(e) = &r.error {
                eprintln!("env {}: {e}", r.env);
            }
        }
        eprintln!(
            "{} of {} environments solved; mean safety {}, mean cost {}",
            doc.mean.n_succeeded,
            doc.n_envs,
            doc.mean.safety_prob.map_or("n/a".into(), |v| v.to_string()),
            doc.mean.objective.map_or("n/a".into(), |v| v.to_string())
        );
        Ok(Exit::Success)
    })())
}

/// Caps the worker pool at `COVSTEER_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("COVSTEER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::spec("", format!("COVSTEER_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Artifact(e.to_string()))
}
