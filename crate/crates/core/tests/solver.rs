mod common;

use common::*;
use covsteer::blocks::{AveragingMode, ConsensusState};
use covsteer::chance::{ConstraintGroup, LinearizedChanceConstraint};
use covsteer::local::{LocalProblem, TerminalCovMode};
use covsteer::models::propagate_cov;
use covsteer::scenario::Boundary;
use covsteer::solver::{admm_solve, baseline_solve, SolverConfig, Status};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random stable-ish linear instance with reachable boundary conditions and
/// a few fixed linearized chance constraints cutting the unconstrained
/// optimum.
pub fn random_convex_instance(seed: u64) -> LocalProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=2);
    let tf = rng.random_range(n + 1..=10);
    let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.15..0.15));
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::identity(n, n) * 0.1;
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
    let s0 = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let mut sig = s0.clone();
    for _ in 0..tf {
        sig = &a * &sig * a.transpose() + &d * d.transpose();
    }
    let boundary = Boundary {
        mu_ic: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        sigma_ic: s0,
        mu_tc: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        sigma_tc: sig * 1.5,
    };
    let q = DMatrix::identity(n, n) * rng.random_range(0.1..1.0);
    let r = DMatrix::identity(m, m) * rng.random_range(0.1..1.0);
    let mut prob = linear_problem(a, b, d, tf, q, r, boundary, TerminalCovMode::Inequality);
    let free = baseline_solve(&prob, &tight_config()).unwrap();
    assert_eq!(free.status, Status::Converged);
    let mut groups = vec![];
    for t in (1..tf).step_by(2) {
        let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let z = 1.2;
        let var = (&w.transpose() * &free.cov_traj[t] * &w)[(0, 0)];
        let g = &w * w.transpose() * (z / (2.0 * var.sqrt()));
        // cut the unconstrained optimum slightly
        let c = -(w.dot(&free.mean_traj[t]) + g.dot(&free.cov_traj[t])) + CUT;
        groups.push(ConstraintGroup {
            t,
            halfplanes: vec![],
            constraints: vec![LinearizedChanceConstraint { c, w, g }],
        });
    }
    prob.constraints = groups;
    prob
}

const CUT: f64 = 0.1;

fn tight_config() -> SolverConfig<f64> {
    SolverConfig {
        rho: 10.0,
        inner_iters: 20_000,
        inner_tol: Some(1e-6),
        conic_tol: 1e-10,
        averaging: AveragingMode::Weighted,
        ..SolverConfig::default()
    }
}

#[test]
fn admm_matches_baseline_on_random_convex_instances() {
    let cfg = tight_config();
    for seed in 0..20 {
        let prob = random_convex_instance(seed);
        let base = baseline_solve(&prob, &cfg).unwrap();
        assert_eq!(base.status, Status::Converged, "seed {seed}");
        let init = ConsensusState::from_anchor(&prob.anchor, cfg.rho);
        let t0 = std::time::Instant::now();
        let (state, hist) = admm_solve(&prob, init, &cfg).unwrap();
        let last = hist.last().unwrap();
        let obj = covsteer::local::mean_objective(&prob.cost, &state.mu_s, &state.v)
            + covsteer::local::cov_objective(&prob.cost, &state.sigma_s, &state.k)
            + covsteer::local::prox_objective(prob.prox, &state.mu_s, &state.sigma_s, &prob.anchor);
        let rel = (obj - base.objective).abs() / base.objective.abs();
        eprintln!(
            "seed {seed}: n {} tf {} iters {} primal {:.2e} rel {:.2e} time {:.2}s",
            prob.state_dim(),
            prob.horizon(),
            hist.len(),
            last.primal,
            rel,
            t0.elapsed().as_secs_f64()
        );
        assert!(last.primal <= 1e-6, "seed {seed}");
        assert!(rel <= 0.01, "seed {seed}: {obj} vs {}", base.objective);
    }
}

#[test]
fn fixed_point_initialization_stays_put() {
    let prob = random_convex_instance(3);
    let cfg = tight_config();
    let (state, first) = admm_solve(&prob, ConsensusState::from_anchor(&prob.anchor, cfg.rho), &cfg).unwrap();
    let (again, hist) = admm_solve(&prob, state.clone(), &cfg).unwrap();
    assert_eq!(hist.len(), 1);
    assert!(hist[0].primal <= 1e-6);
    // one more step moves the consensus by about the last dual residual
    let step = first.last().unwrap().dual / cfg.rho;
    for t in 0..state.mu_cn.len() {
        let moved = (&again.mu_cn[t] - &state.mu_cn[t]).amax();
        assert!(moved <= 10.0 * step + 1e-9, "{moved:e} vs {step:e}");
    }
}

#[test]
fn fixed_iteration_budget_without_tolerance() {
    let prob = random_convex_instance(1);
    let cfg = SolverConfig {
        inner_iters: 15,
        inner_tol: None,
        ..SolverConfig::default()
    };
    let (_, hist) = admm_solve(&prob, ConsensusState::from_anchor(&prob.anchor, 1.0), &cfg).unwrap();
    assert_eq!(hist.len(), 15);
}

#[test]
fn baseline_reports_certified_infeasibility() {
    // scalar, no input authority between fixed means, and a halfplane at the
    // only interior step that excludes the forced mean
    let mut prob = linear_problem(
        scalar(1.0),
        scalar(0.0),
        scalar(0.0),
        2,
        scalar(1.0),
        scalar(1.0),
        Boundary {
            mu_ic: vec1(0.0),
            sigma_ic: scalar(1.0),
            mu_tc: vec1(0.0),
            sigma_tc: scalar(2.0),
        },
        TerminalCovMode::Inequality,
    );
    prob.constraints = vec![ConstraintGroup {
        t: 1,
        halfplanes: vec![],
        constraints: vec![LinearizedChanceConstraint {
            c: 1.0,
            w: vec1(1.0),
            g: scalar(0.0),
        }],
    }];
    let report = baseline_solve(&prob, &SolverConfig::default()).unwrap();
    assert_eq!(report.status, Status::Infeasible);
}

#[test]
fn baseline_covariances_follow_recovered_gains() {
    let prob = random_convex_instance(7);
    let report = baseline_solve(&prob, &tight_config()).unwrap();
    for t in 0..prob.horizon() {
        let replay = propagate_cov(&prob.lin[t], &report.cov_traj[t], &report.law.k[t]);
        let gap = (replay - &report.cov_traj[t + 1]).norm();
        assert!(gap.is_finite());
    }
}
