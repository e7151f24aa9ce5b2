//! Inner ADMM, outer successive linearization, the single-program baseline
//! and the initial guess.

use crate::assembly::{
    cov_constraints, cov_hessian, cov_linear_objective, mean_equalities, mean_hessian, polytope_rows, CovLayout,
    MeanLayout, Triplets,
};
use crate::blocks::{
    chance_prox, consensus_update, dual_update, recover_gains, AveragingMode, BlockSettings, ConsensusState,
    CovProxSolver, MeanProxSolver,
};
use crate::chance::max_violation;
use crate::error::{Error, Result};
use crate::local::{
    build_local_problem, cov_objective, mean_objective, prox_objective, LocalProblem, ProxWeights, TerminalCovMode,
};
use crate::models::{
    forward_pass, linearize_dynamics, propagate_cov, sampled_forward_pass, symmetrize, ControlLaw, GaussianState,
    NominalTrajectory, RolloutFeedback,
};
use crate::scenario::Scenario;
use covsteer_conic::{svec, Cone, ConeProgram, ConeSolver, CscMatrix, Real, Settings, SolveStatus};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardPassMode {
    /// Noiseless rollout of the mean; `Σ̄` from the covariance block.
    #[default]
    MeanPropagation,
    /// Sample moments of noisy rollouts.
    Sampled { n_samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Admm,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub rho: T,
    pub alpha_mu: T,
    pub alpha_sigma: T,
    pub inner_iters: usize,
    pub outer_iters: usize,
    /// Primal- and dual-residual stop for the inner loop; `None` runs all
    /// iterations.
    pub inner_tol: Option<T>,
    pub outer_tol: T,
    pub averaging: AveragingMode,
    pub forward_pass: ForwardPassMode,
    pub feedback: RolloutFeedback,
    /// Overrides the scenario's terminal covariance mode.
    pub terminal_cov_mode: Option<TerminalCovMode>,
    pub seed: u64,
    pub conic_tol: T,
    pub conic_max_iters: usize,
    /// Consecutive infeasible local problems tolerated before giving up.
    pub patience: usize,
    pub reset_duals: bool,
    pub dykstra_max_sweeps: usize,
    pub dykstra_tol: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            rho: T::one(),
            alpha_mu: T::one(),
            alpha_sigma: T::one(),
            inner_iters: 15,
            outer_iters: 10,
            inner_tol: None,
            outer_tol: T::lit(1e-4),
            averaging: AveragingMode::Weighted,
            forward_pass: ForwardPassMode::MeanPropagation,
            feedback: RolloutFeedback::Full,
            terminal_cov_mode: None,
            seed: 0,
            conic_tol: T::lit(1e-7),
            conic_max_iters: 50_000,
            patience: 2,
            reset_duals: false,
            dykstra_max_sweeps: 200,
            dykstra_tol: T::lit(1e-10),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if !pos(self.rho) {
            return Err(Error::Config("rho must be positive".into()));
        }
        if self.alpha_mu < T::zero() || self.alpha_sigma < T::zero() {
            return Err(Error::Config("proximal weights must be nonnegative".into()));
        }
        if self.inner_iters == 0 || self.outer_iters == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if self.inner_tol.is_some_and(|t| !pos(t)) || !pos(self.outer_tol) || !pos(self.conic_tol) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if let ForwardPassMode::Sampled { n_samples } = self.forward_pass {
            if n_samples < 2 {
                return Err(Error::Config("sampled forward pass needs at least 2 samples".into()));
            }
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn prox_weights(&self) -> ProxWeights<T> {
        ProxWeights {
            alpha_mu: self.alpha_mu,
            alpha_sigma: self.alpha_sigma,
        }
    }

    pub fn block_settings(&self) -> BlockSettings<T> {
        BlockSettings {
            conic: Settings {
                tol: self.conic_tol,
                max_iters: self.conic_max_iters,
                ..Settings::default()
            },
            dykstra_max_sweeps: self.dykstra_max_sweeps,
            dykstra_tol: self.dykstra_tol,
            ..BlockSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    Infeasible,
    Numeric,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max_iters",
            Status::Infeasible => "infeasible",
            Status::Numeric => "numeric",
        }
    }
}

/// Diagnostics of one inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRecord<T> {
    pub primal: T,
    pub dual: T,
    /// Largest linearized chance-constraint value at the dynamics copies.
    pub chance_violation: T,
    /// The covariance relaxation was slack at this iterate.
    pub cov_relaxed: bool,
    pub dykstra_converged: bool,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord<T> {
    pub inner: Vec<InnerRecord<T>>,
    pub trust_region: T,
    pub constraint_residual: T,
    pub objective: T,
    /// Set when the local problem failed; the other fields are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T: Real> {
    pub method: Method,
    pub status: Status,
    pub law: ControlLaw<T>,
    pub mean_traj: Vec<DVector<T>>,
    pub cov_traj: Vec<DMatrix<T>>,
    /// Local objective at the returned solution.
    pub objective: T,
    pub history: Vec<OuterRecord<T>>,
    pub constraint_residual: T,
    pub wall_time: f64,
    pub message: Option<String>,
}

impl<T: Real> SolveReport<T> {
    pub fn outer_iterations(&self) -> usize {
        self.history.len()
    }

    /// Trust-region residual of each successful outer iteration.
    pub fn trust_region_history(&self) -> Vec<T> {
        self.history
            .iter()
            .filter(|r| r.failure.is_none())
            .map(|r| r.trust_region)
            .collect()
    }

    /// Whether any local problem along the way was infeasible.
    pub fn saw_infeasibility(&self) -> bool {
        self.history.iter().any(|r| r.failure.is_some())
    }
}

/// Conic iterates carried from one local problem to the next.
#[derive(Debug, Clone, Default)]
pub struct WarmStart<T> {
    cov: Option<(Vec<T>, Vec<T>)>,
}

pub struct AdmmOutput<T: Real> {
    pub state: ConsensusState<T>,
    pub history: Vec<InnerRecord<T>>,
    pub warm: WarmStart<T>,
}

fn max_dual_change<T: Real>(state: &ConsensusState<T>, prev_mu: &[DVector<T>], prev_sigma: &[DMatrix<T>]) -> T {
    let mut r = T::zero();
    for t in 0..prev_mu.len() {
        r = r
            .max((&state.mu_cn[t] - &prev_mu[t]).amax())
            .max((&state.sigma_cn[t] - &prev_sigma[t]).norm());
    }
    r * state.rho
}

/// Consensus ADMM on one local problem.
pub fn admm_solve<T: Real>(
    prob: &LocalProblem<T>,
    init: ConsensusState<T>,
    cfg: &SolverConfig<T>,
) -> Result<(ConsensusState<T>, Vec<InnerRecord<T>>)> {
    admm_solve_warm(prob, init, cfg, None).map(|o| (o.state, o.history))
}

const INEXACT_FACTOR: f64 = 1e-2;
const INEXACT_CAP: f64 = 1e-4;

pub fn admm_solve_warm<T: Real>(
    prob: &LocalProblem<T>,
    init: ConsensusState<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&WarmStart<T>>,
) -> Result<AdmmOutput<T>> {
    cfg.validate()?;
    prob.validate()?;
    let tf = prob.horizon();
    if init.horizon() != tf || init.mu_cn.len() != tf + 1 {
        return Err(Error::Dimension(
            "initial consensus state does not match the horizon".into(),
        ));
    }
    let settings = cfg.block_settings();
    let mut state = init;
    state.rho = cfg.rho;
    let mut mean = MeanProxSolver::new(prob, cfg.rho, &settings)?;
    let mut cov = CovProxSolver::new(prob, cfg.rho, &settings)?;
    if let Some((x, y)) = warm.and_then(|w| w.cov.as_ref()) {
        cov.warm_start(x, y);
    }
    let mut history = Vec::with_capacity(cfg.inner_iters);
    let mut primal_prev = state.primal_residual();
    for iteration in 1..=cfg.inner_iters {
        // inexact proxes: no point solving far below the consensus error
        let tol = (primal_prev * T::lit(INEXACT_FACTOR))
            .min(T::lit(INEXACT_CAP))
            .max(cfg.conic_tol);
        mean.set_tolerance(tol);
        cov.set_tolerance(tol);
        let (tm, ts) = state.dynamics_targets();
        let (cm, cs) = state.chance_targets();
        let ((mean_out, cov_out), cc) = rayon::join(
            || rayon::join(|| mean.solve(prob, &tm), || cov.solve(prob, &ts)),
            || chance_prox(&prob.constraints, &cm, &cs, &settings),
        );
        let wrap = |e: Error| Error::Inner {
            iteration,
            source: Box::new(e),
        };
        let mean_out = mean_out.map_err(wrap)?;
        let cov_out = cov_out.map_err(wrap)?;
        state.v = mean_out.v;
        state.mu_s = mean_out.mu;
        state.k = cov_out.k;
        state.sigma_s = cov_out.sigma;
        state.mu_cc = cc.mu;
        state.sigma_cc = cc.sigma;

        let prev_mu = state.mu_cn.clone();
        let prev_sigma = state.sigma_cn.clone();
        consensus_update(&mut state, prob.prox, &prob.anchor, cfg.averaging);
        let primal = state.primal_residual();
        primal_prev = primal;
        dual_update(&mut state);
        let dual = max_dual_change(&state, &prev_mu, &prev_sigma);
        history.push(InnerRecord {
            primal,
            dual,
            chance_violation: max_violation(&prob.constraints, &state.mu_s, &state.sigma_s),
            cov_relaxed: cov_out.relaxed,
            dykstra_converged: cc.converged,
        });
        if !primal.is_finite() {
            return Err(wrap(Error::Conic(covsteer_conic::ConicError::NonFinite)));
        }
        // a small primal residual alone can mean the copies have not moved yet
        if cfg.inner_tol.is_some_and(|tol| primal <= tol && dual <= tol) {
            break;
        }
    }
    let warm = WarmStart {
        cov: cov.last_iterate().map(|(x, y)| (x.to_vec(), y.to_vec())),
    };
    Ok(AdmmOutput { state, history, warm })
}

/// A solution of one local problem.
#[derive(Debug, Clone)]
struct LocalSolution<T: Real> {
    v: Vec<DVector<T>>,
    k: Vec<DMatrix<T>>,
    mu: Vec<DVector<T>>,
    sigma: Vec<DMatrix<T>>,
    inner: Vec<InnerRecord<T>>,
}

fn local_objective<T: Real>(prob: &LocalProblem<T>, sol: &LocalSolution<T>) -> T {
    mean_objective(&prob.cost, &sol.mu, &sol.v)
        + cov_objective(&prob.cost, &sol.sigma, &sol.k)
        + prox_objective(prob.prox, &sol.mu, &sol.sigma, &prob.anchor)
}

fn trust_region<T: Real>(sol: &LocalSolution<T>, anchor: &NominalTrajectory<T>) -> T {
    (0..sol.mu.len()).fold(T::zero(), |acc, t| {
        acc.max((&sol.mu[t] - &anchor.x[t]).amax())
            .max((&sol.sigma[t] - &anchor.sigma[t]).norm())
    })
}

/// The whole local problem as one conic program.
pub fn baseline_program<T: Real>(prob: &LocalProblem<T>) -> ConeProgram<T> {
    baseline_parts(prob).0
}

fn baseline_parts<T: Real>(prob: &LocalProblem<T>) -> (ConeProgram<T>, MeanLayout, CovLayout) {
    let (n, m, tf) = (prob.state_dim(), prob.control_dim(), prob.horizon());
    let ml = MeanLayout { n, m, tf, base: 0 };
    let cl = CovLayout {
        n,
        m,
        tf,
        base: ml.len(),
    };
    let nv = ml.len() + cl.len();

    let mut p = Triplets::new();
    mean_hessian(prob, &ml, prob.prox.alpha_mu, &mut p);
    cov_hessian(&cl, prob.prox.alpha_sigma, &mut p);
    let mut c = vec![T::zero(); nv];
    for t in 0..=tf {
        for i in 0..n {
            c[ml.mu(t) + i] = prob.cost.lin[t][i] - prob.prox.alpha_mu * prob.anchor.x[t][i];
        }
    }
    cov_linear_objective(prob, &cl, prob.prox.alpha_sigma, &prob.anchor.sigma, &mut c);

    let mut a = Triplets::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    mean_equalities(prob, &ml, 0, &mut a, &mut b);
    cones.push(Cone::Zero(b.len()));
    let mut nonneg = 0;
    if let Some(poly) = &prob.polytope {
        nonneg += polytope_rows(&poly.gmat, &poly.b_max, &ml, b.len(), &mut a, &mut b);
    }
    for grp in &prob.constraints {
        let off = cl.sigma(grp.t).expect("interior step");
        for con in &grp.constraints {
            let row = b.len();
            for i in 0..n {
                if con.w[i] != T::zero() {
                    a.push((row, ml.mu(grp.t) + i, con.w[i]));
                }
            }
            for (r, g) in svec(&con.g).into_iter().enumerate() {
                if g != T::zero() {
                    a.push((row, off + r, g));
                }
            }
            b.push(-con.c);
            nonneg += 1;
        }
    }
    if nonneg > 0 {
        cones.push(Cone::Nonneg(nonneg));
    }
    let row0 = b.len();
    let rows = cov_constraints(prob, &cl, row0, &mut a, &mut b, &mut cones);
    let prog = ConeProgram {
        p: Some(CscMatrix::from_triplets(nv, nv, &p)),
        c,
        a: CscMatrix::from_triplets(row0 + rows, nv, &a),
        b,
        cones,
    };
    (prog, ml, cl)
}

fn baseline_local<T: Real>(prob: &LocalProblem<T>, cfg: &SolverConfig<T>) -> Result<LocalSolution<T>> {
    let (prog, ml, cl) = baseline_parts(prob);
    let settings = cfg.block_settings().conic;
    let mut solver = ConeSolver::new(prog, settings)?;
    let sol = solver.solve();
    let solved = match sol.status {
        SolveStatus::Optimal => true,
        // an exhausted budget with a clearly nonzero primal residual is read
        // as infeasibility the certificate test did not catch
        SolveStatus::MaxIters => sol.residuals.primal <= T::lit(1e-4),
        SolveStatus::Infeasible | SolveStatus::Unbounded => false,
    };
    if !solved {
        return Err(Error::InfeasibleBaseline);
    }
    let x = &sol.x;
    let mu = (0..=ml.tf)
        .map(|t| DVector::from_column_slice(&x[ml.mu(t)..ml.mu(t) + ml.n]))
        .collect();
    let v = (0..ml.tf)
        .map(|t| DVector::from_column_slice(&x[ml.v(t)..ml.v(t) + ml.m]))
        .collect();
    let (k, sigma) = recover_gains(prob, &cl, x)?;
    Ok(LocalSolution {
        v,
        k,
        mu,
        sigma,
        inner: vec![],
    })
}

/// Solves one local problem as a single conic program.
pub fn baseline_solve<T: Real>(prob: &LocalProblem<T>, cfg: &SolverConfig<T>) -> Result<SolveReport<T>> {
    let start = Instant::now();
    prob.validate()?;
    let anchor = &prob.anchor;
    let law_from = |sol: &LocalSolution<T>| ControlLaw {
        v: sol.v.clone(),
        k: sol.k.clone(),
        ref_mean: sol.mu[..prob.horizon()].to_vec(),
    };
    match baseline_local(prob, cfg) {
        Ok(sol) => {
            let objective = local_objective(prob, &sol);
            let cres = max_violation(&prob.constraints, &sol.mu, &sol.sigma);
            Ok(SolveReport {
                method: Method::Baseline,
                status: Status::Converged,
                law: law_from(&sol),
                history: vec![OuterRecord {
                    inner: vec![],
                    trust_region: trust_region(&sol, anchor),
                    constraint_residual: cres,
                    objective,
                    failure: None,
                }],
                mean_traj: sol.mu,
                cov_traj: sol.sigma,
                objective,
                constraint_residual: cres,
                wall_time: start.elapsed().as_secs_f64(),
                message: None,
            })
        }
        Err(e) if e.is_infeasibility() => Ok(failure_report(
            Method::Baseline,
            Status::Infeasible,
            anchor,
            vec![failed_record(&e)],
            e.to_string(),
            start,
        )),
        Err(e) => Err(e),
    }
}

fn failed_record<T: Real>(e: &Error) -> OuterRecord<T> {
    let nan = T::lit(f64::NAN);
    OuterRecord {
        inner: vec![],
        trust_region: nan,
        constraint_residual: nan,
        objective: nan,
        failure: Some(e.to_string()),
    }
}

/// Report for a run without any successful local solve: the anchor with
/// zero feedback.
fn failure_report<T: Real>(
    method: Method,
    status: Status,
    anchor: &NominalTrajectory<T>,
    history: Vec<OuterRecord<T>>,
    message: String,
    start: Instant,
) -> SolveReport<T> {
    let tf = anchor.horizon();
    let n = anchor.x[0].len();
    let m = anchor.u.first().map_or(0, |u| u.len());
    SolveReport {
        method,
        status,
        law: ControlLaw {
            v: anchor.u.clone(),
            k: vec![DMatrix::zeros(m, n); tf],
            ref_mean: anchor.x[..tf].to_vec(),
        },
        mean_traj: anchor.x.clone(),
        cov_traj: anchor.sigma.clone(),
        objective: T::lit(f64::NAN),
        history,
        constraint_residual: T::lit(f64::NAN),
        wall_time: start.elapsed().as_secs_f64(),
        message: Some(message),
    }
}

/// Successive linearization around forward passes, with the ADMM scheme or
/// the single-program baseline solving each local problem.
pub fn outer_solve<T: Real>(
    scenario: &Scenario<T>,
    cfg: &SolverConfig<T>,
    tau0: &NominalTrajectory<T>,
    method: Method,
) -> Result<SolveReport<T>> {
    let start = Instant::now();
    cfg.validate()?;
    scenario.validate()?;
    let tau0 = validate_trajectory(scenario, tau0)?;
    let mode = cfg.terminal_cov_mode.unwrap_or(scenario.terminal_mode);
    let weights = cfg.prox_weights();
    let model = scenario.model.as_ref();
    let tf = scenario.horizon;

    let mut tau = tau0.clone();
    let mut state = ConsensusState::from_anchor(&tau, cfg.rho);
    let mut warm: Option<WarmStart<T>> = None;
    let mut history = Vec::with_capacity(cfg.outer_iters);
    let mut last: Option<(LocalSolution<T>, T, T)> = None;
    let mut failures = 0;
    let mut status = Status::MaxIters;
    let mut message = None;

    for it in 0..cfg.outer_iters {
        let prob = build_local_problem(scenario, mode, weights, &tau)?;
        let result = match method {
            Method::Admm => {
                let mut init = state.clone();
                if cfg.reset_duals {
                    init.reset_duals();
                }
                admm_solve_warm(&prob, init, cfg, warm.as_ref()).map(|out| {
                    state = out.state;
                    warm = Some(out.warm);
                    LocalSolution {
                        v: state.v.clone(),
                        k: state.k.clone(),
                        mu: state.mu_s.clone(),
                        sigma: state.sigma_s.clone(),
                        inner: out.history,
                    }
                })
            }
            Method::Baseline => baseline_local(&prob, cfg),
        };
        let sol = match result {
            Ok(sol) => {
                failures = 0;
                sol
            }
            Err(e) => {
                history.push(failed_record(&e));
                let infeasible = e.is_infeasibility();
                failures += 1;
                if !infeasible || method == Method::Baseline || failures >= cfg.patience {
                    status = if infeasible {
                        Status::Infeasible
                    } else {
                        Status::Numeric
                    };
                    message = Some(e.to_string());
                    break;
                }
                // retry the same linearization from a clean splitting state
                state = ConsensusState::from_anchor(&tau, cfg.rho);
                warm = None;
                continue;
            }
        };
        let objective = local_objective(&prob, &sol);
        let tr = trust_region(&sol, &tau);
        let cres = max_violation(&prob.constraints, &sol.mu, &sol.sigma);
        history.push(OuterRecord {
            inner: sol.inner.clone(),
            trust_region: tr,
            constraint_residual: cres,
            objective,
            failure: None,
        });
        let law = ControlLaw {
            v: sol.v.clone(),
            k: sol.k.clone(),
            ref_mean: sol.mu[..tf].to_vec(),
        };
        let converged = tr <= cfg.outer_tol && cres <= cfg.outer_tol;
        last = Some((sol, objective, cres));
        if converged {
            status = Status::Converged;
            break;
        }
        if it + 1 == cfg.outer_iters {
            break;
        }
        let next = match cfg.forward_pass {
            ForwardPassMode::MeanPropagation => forward_pass(
                model,
                &law,
                &last.as_ref().expect("just set").0.sigma,
                &scenario.boundary.mu_ic,
                cfg.feedback,
            ),
            ForwardPassMode::Sampled { n_samples } => sampled_forward_pass(
                model,
                &law,
                &GaussianState::new(scenario.boundary.mu_ic.clone(), scenario.boundary.sigma_ic.clone()),
                n_samples,
                cfg.seed.wrapping_add(it as u64),
                cfg.feedback,
            ),
        };
        match next {
            Ok(next) => tau = next,
            Err(e) => {
                status = Status::Numeric;
                message = Some(e.to_string());
                break;
            }
        }
    }

    Ok(match last {
        Some((sol, objective, cres)) => SolveReport {
            method,
            status,
            law: ControlLaw {
                v: sol.v,
                k: sol.k,
                ref_mean: sol.mu[..tf].to_vec(),
            },
            mean_traj: sol.mu,
            cov_traj: sol.sigma,
            objective,
            history,
            constraint_residual: cres,
            wall_time: start.elapsed().as_secs_f64(),
            message,
        },
        None => failure_report(
            method,
            status,
            &tau,
            history,
            message.unwrap_or_else(|| "no local problem solved".into()),
            start,
        ),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode<T: Real> {
    StraightLine,
    Provided(NominalTrajectory<T>),
}

/// Largest tolerated defect of a supplied trajectory.
pub const PROVIDED_DEFECT_TOL: f64 = 1e-6;

/// Builds the first linearization point.
pub fn initial_guess<T: Real>(scenario: &Scenario<T>, mode: InitMode<T>) -> Result<NominalTrajectory<T>> {
    scenario.validate()?;
    match mode {
        InitMode::Provided(traj) => validate_trajectory(scenario, &traj),
        InitMode::StraightLine => straight_line(scenario),
    }
}

/// Checks horizon, start point and dynamic consistency; fills `Σ̄` by
/// open-loop propagation when it is missing.
fn validate_trajectory<T: Real>(scenario: &Scenario<T>, traj: &NominalTrajectory<T>) -> Result<NominalTrajectory<T>> {
    let (n, m, tf) = (scenario.state_dim(), scenario.control_dim(), scenario.horizon);
    if traj.horizon() != tf || traj.x.len() != tf + 1 {
        return Err(Error::Dimension(format!(
            "trajectory horizon {} differs from scenario horizon {tf}",
            traj.horizon()
        )));
    }
    if traj.x.iter().any(|x| x.len() != n) || traj.u.iter().any(|u| u.len() != m) {
        return Err(Error::Dimension(format!("trajectory must have n = {n}, m = {m}")));
    }
    let defect = traj.defect(scenario.model.as_ref());
    let start = (&traj.x[0] - &scenario.boundary.mu_ic).amax();
    let worst = defect.max(start);
    if !(worst <= T::lit(PROVIDED_DEFECT_TOL)) {
        return Err(Error::InconsistentTrajectory { defect: worst.as_f64() });
    }
    let mut out = traj.clone();
    if out.sigma.len() != tf + 1 {
        out.sigma = open_loop_covariance(scenario, &out.x, &out.u)?;
    }
    Ok(out)
}

fn open_loop_covariance<T: Real>(
    scenario: &Scenario<T>,
    x: &[DVector<T>],
    u: &[DVector<T>],
) -> Result<Vec<DMatrix<T>>> {
    let (n, m) = (scenario.state_dim(), scenario.control_dim());
    let mut sigma = vec![symmetrize(&scenario.boundary.sigma_ic)];
    for t in 0..u.len() {
        let lin = linearize_dynamics(scenario.model.as_ref(), &x[t], &u[t], t)?;
        let next = propagate_cov(&lin, &sigma[t], &DMatrix::zeros(m, n));
        sigma.push(next);
    }
    Ok(sigma)
}

fn pseudo_inverse<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &s| a.max(s));
    let eps = smax * T::lit(1e-12);
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

fn rollout<T: Real>(scenario: &Scenario<T>, u: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
    let mut x = vec![scenario.boundary.mu_ic.clone()];
    for (t, ut) in u.iter().enumerate() {
        let next = scenario.model.step(&x[t], ut);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        x.push(next);
    }
    Ok(x)
}

/// Straight-line mean interpolation, least-squares tracking controls, then
/// a minimum-norm Gauss-Newton correction of the endpoint.
fn straight_line<T: Real>(scenario: &Scenario<T>) -> Result<NominalTrajectory<T>> {
    let (m, tf) = (scenario.control_dim(), scenario.horizon);
    let b = &scenario.boundary;
    let model = scenario.model.as_ref();
    let target = |t: usize| &b.mu_ic + (&b.mu_tc - &b.mu_ic) * (T::from_usize_lossy(t) / T::from_usize_lossy(tf));

    let zero = DVector::zeros(m);
    let mut x = vec![b.mu_ic.clone()];
    let mut u = Vec::with_capacity(tf);
    for t in 0..tf {
        let drift = model.step(&x[t], &zero);
        let (_, bmat) = model.jacobians(&x[t], &zero);
        let ut = pseudo_inverse(&bmat) * (target(t + 1) - drift);
        let next = model.step(&x[t], &ut);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        x.push(next);
        u.push(ut);
    }

    let residual = |x: &[DVector<T>]| &b.mu_tc - &x[tf];
    let mut r = residual(&x);
    for _ in 0..20 {
        let rn = r.amax();
        if rn <= T::lit(1e-11) * (T::one() + b.mu_tc.amax()) {
            break;
        }
        let jac = endpoint_jacobian(scenario, &x, &u)?;
        let jjt = &jac * jac.transpose();
        let step_dir = jac.transpose() * pseudo_inverse(&jjt) * &r;
        let mut step = T::one();
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<DVector<T>> = u
                .iter()
                .enumerate()
                .map(|(t, ut)| ut + step_dir.rows(t * m, m) * step)
                .collect();
            if let Ok(xt) = rollout(scenario, &trial) {
                let rt = residual(&xt);
                if rt.amax() < rn {
                    u = trial;
                    x = xt;
                    r = rt;
                    improved = true;
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        if !improved {
            break;
        }
    }
    let sigma = open_loop_covariance(scenario, &x, &u)?;
    Ok(NominalTrajectory { x, u, sigma })
}

/// `∂x_tf/∂(u_0 … u_{tf−1})` along a rollout.
fn endpoint_jacobian<T: Real>(scenario: &Scenario<T>, x: &[DVector<T>], u: &[DVector<T>]) -> Result<DMatrix<T>> {
    let (n, m, tf) = (scenario.state_dim(), scenario.control_dim(), scenario.horizon);
    let mut jac = DMatrix::zeros(n, tf * m);
    let mut phi = DMatrix::<T>::identity(n, n);
    for t in (0..tf).rev() {
        let lin = linearize_dynamics(scenario.model.as_ref(), &x[t], &u[t], t)?;
        jac.view_mut((0, t * m), (n, m)).copy_from(&(&phi * &lin.b));
        phi = &phi * &lin.a;
    }
    Ok(jac)
}
