//! Monte-Carlo evaluation of a control law on the nonlinear stochastic
//! dynamics.

use crate::chance::signed_distance;
use crate::error::{Error, Result};
use crate::models::{psd_sqrt, ControlLaw};
use crate::noise::{keyed_rng, standard_normal};
use crate::scenario::Scenario;
use crate::solver::SolveReport;
use covsteer_conic::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Initial-state draws rejected before giving up on a truncated sample.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome<T> {
    /// Every obstacle had positive signed distance at every step.
    pub safe: bool,
    /// The rollout produced a non-finite state; counted as unsafe.
    pub numeric_failure: bool,
    /// `Σ_t c(x_t) + ½ Σ_t u_tᵀ R u_t`; NaN after a numeric failure.
    pub cost: T,
    /// Smallest signed distance seen along the rollout.
    pub min_distance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport<T> {
    pub n_trials: usize,
    pub seed: u64,
    pub safe_count: usize,
    pub safety_prob: T,
    pub numeric_failures: usize,
    /// Mean cost over the trials that did not fail numerically.
    pub est_cost: T,
    /// Standard error of `est_cost`.
    pub cost_std_err: T,
    pub optimizer_cost: Option<T>,
    /// Designed joint safety `1 − δ` of the scenario.
    pub specified_safety: T,
    pub per_trial: Vec<TrialOutcome<T>>,
}

/// One sampled closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrajectory<T: Real> {
    pub x: Vec<DVector<T>>,
    pub u: Vec<DVector<T>>,
}

fn initial_state<T: Real>(scenario: &Scenario<T>, root: &DMatrix<T>, seed: u64, trial: u64) -> Result<DVector<T>> {
    let b = &scenario.boundary;
    let n = scenario.state_dim();
    let mut rng = keyed_rng(seed, trial, 0);
    let Some(tr) = &scenario.truncation else {
        return Ok(&b.mu_ic + root * standard_normal::<T>(&mut rng, n));
    };
    for _ in 0..MAX_REJECTIONS {
        let x = &b.mu_ic + root * standard_normal::<T>(&mut rng, n);
        let inside = tr
            .coords
            .iter()
            .all(|&i| (x[i] - b.mu_ic[i]).abs() <= tr.bound * b.sigma_ic[(i, i)].max(T::zero()).sqrt());
        if inside {
            return Ok(x);
        }
    }
    Err(Error::Config("truncation bounds reject every initial draw".into()))
}

/// Rollout of trial `trial`. The initial state uses the keyed stream
/// `(seed, trial, 0)` and the noise of step `t` the stream `(seed, trial,
/// t + 1)`, so a trial is reproducible on its own.
pub fn simulate_trial<T: Real>(
    scenario: &Scenario<T>,
    law: &ControlLaw<T>,
    seed: u64,
    trial: u64,
) -> Result<SampledTrajectory<T>> {
    let root = psd_sqrt(&scenario.boundary.sigma_ic);
    simulate(scenario, law, &root, seed, trial)
}

fn simulate<T: Real>(
    scenario: &Scenario<T>,
    law: &ControlLaw<T>,
    root: &DMatrix<T>,
    seed: u64,
    trial: u64,
) -> Result<SampledTrajectory<T>> {
    let model = scenario.model.as_ref();
    let tf = law.horizon();
    let mut x = vec![initial_state(scenario, root, seed, trial)?];
    let mut u = Vec::with_capacity(tf);
    for t in 0..tf {
        let ut = law.control(t, &x[t]);
        let mut rng = keyed_rng(seed, trial, t as u64 + 1);
        let w = standard_normal::<T>(&mut rng, model.noise_dim());
        let next = model.step(&x[t], &ut) + model.diffusion(&x[t]) * w;
        if next.iter().any(|v| !v.is_finite()) || ut.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        u.push(ut);
        x.push(next);
    }
    Ok(SampledTrajectory { x, u })
}

fn outcome<T: Real>(scenario: &Scenario<T>, run: Result<SampledTrajectory<T>>) -> Result<TrialOutcome<T>> {
    let traj = match run {
        Ok(traj) => traj,
        Err(Error::Divergence { .. }) => {
            return Ok(TrialOutcome {
                safe: false,
                numeric_failure: true,
                cost: T::lit(f64::NAN),
                min_distance: T::lit(f64::NAN),
            })
        }
        Err(e) => return Err(e),
    };
    let half = T::lit(0.5);
    let state_cost = traj
        .x
        .iter()
        .fold(T::zero(), |acc, x| acc + scenario.state_cost.value(x));
    let cost = traj
        .u
        .iter()
        .fold(state_cost, |acc, u| acc + half * (&scenario.r * u).dot(u));
    let mut min_distance = T::lit(f64::INFINITY);
    for x in &traj.x {
        for obs in &scenario.obstacles {
            min_distance = min_distance.min(signed_distance(obs, x));
        }
    }
    Ok(TrialOutcome {
        safe: min_distance > T::zero(),
        numeric_failure: false,
        cost,
        min_distance,
    })
}

/// Simulates `n_trials` closed-loop rollouts and tallies safety and cost.
/// Results are identical for any worker count.
pub fn evaluate<T: Real>(
    scenario: &Scenario<T>,
    law: &ControlLaw<T>,
    n_trials: usize,
    seed: u64,
) -> Result<MonteCarloReport<T>> {
    if n_trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    scenario.validate()?;
    law.validate(scenario.state_dim(), scenario.control_dim())?;
    if law.horizon() != scenario.horizon {
        return Err(Error::Dimension(format!(
            "control law horizon {} differs from scenario horizon {}",
            law.horizon(),
            scenario.horizon
        )));
    }
    let root = psd_sqrt(&scenario.boundary.sigma_ic);
    let per_trial: Vec<TrialOutcome<T>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| outcome(scenario, simulate(scenario, law, &root, seed, trial)))
        .collect::<Result<_>>()?;

    let safe_count = per_trial.iter().filter(|o| o.safe).count();
    let numeric_failures = per_trial.iter().filter(|o| o.numeric_failure).count();
    let finite: Vec<T> = per_trial
        .iter()
        .filter(|o| !o.numeric_failure)
        .map(|o| o.cost)
        .collect();
    let (est_cost, cost_std_err) = mean_and_std_err(&finite);
    Ok(MonteCarloReport {
        n_trials,
        seed,
        safe_count,
        safety_prob: T::from_usize_lossy(safe_count) / T::from_usize_lossy(n_trials),
        numeric_failures,
        est_cost,
        cost_std_err,
        optimizer_cost: None,
        specified_safety: T::one() - scenario.budget.delta,
        per_trial,
    })
}

fn mean_and_std_err<T: Real>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::lit(f64::NAN), T::lit(f64::NAN));
    }
    let k = T::from_usize_lossy(values.len());
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / k;
    if values.len() < 2 {
        return (mean, T::zero());
    }
    let ss = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    let var = ss / T::from_usize_lossy(values.len() - 1);
    (mean, (var / k).sqrt())
}

/// Optimizer and estimated columns side by side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison<T> {
    pub optimizer_cost: T,
    pub estimated_cost: T,
    /// `|estimated − optimizer| / |optimizer|`.
    pub cost_gap: T,
    /// Designed safety `1 − δ`; the optimizer does not compute one.
    pub optimizer_safety: T,
    pub estimated_safety: T,
}

/// `|estimated − optimizer| / |optimizer|`, zero when the two agree exactly.
pub fn cost_gap<T: Real>(optimizer: T, estimated: T) -> T {
    if estimated == optimizer {
        T::zero()
    } else {
        (estimated - optimizer).abs() / optimizer.abs()
    }
}

pub fn compare<T: Real>(report: &MonteCarloReport<T>, solve: &SolveReport<T>) -> Comparison<T> {
    let opt = solve.objective;
    let est = report.est_cost;
    Comparison {
        optimizer_cost: opt,
        estimated_cost: est,
        cost_gap: cost_gap(opt, est),
        optimizer_safety: report.specified_safety,
        estimated_safety: report.safety_prob,
    }
}
