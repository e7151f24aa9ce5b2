//! The three proximal blocks, the consensus average and the dual ascent.

use crate::assembly::{
    cov_constraints, cov_hessian, cov_linear_objective, mean_equalities, mean_hessian, polytope_rows, CovLayout,
    MeanLayout, Triplets,
};
use crate::chance::ConstraintGroup;
use crate::error::{Error, Result};
use crate::local::{LocalProblem, ProxWeights};
use crate::models::{propagate_cov, symmetrize, NominalTrajectory};
use covsteer_conic::{smat, Cone, ConeProgram, ConeSolver, CscMatrix, LdlFactor, Real, Settings, SolveStatus};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Wheel-speed style input bounds `−b_max ≤ G u ≤ b_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolytope<T: Real> {
    pub gmat: DMatrix<T>,
    pub b_max: DVector<T>,
}

impl<T: Real> ControlPolytope<T> {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.gmat.ncols() != m || self.gmat.nrows() != self.b_max.len() {
            return Err(Error::Dimension(format!(
                "polytope G is {}x{} with {} bounds, expected {m} columns",
                self.gmat.nrows(),
                self.gmat.ncols(),
                self.b_max.len()
            )));
        }
        if self.b_max.iter().any(|&b| b <= T::zero()) {
            return Err(Error::Config("polytope bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, u: &DVector<T>, slack: T) -> bool {
        let gu = &self.gmat * u;
        gu.iter().zip(self.b_max.iter()).all(|(g, b)| g.abs() <= *b + slack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSettings<T> {
    pub conic: Settings<T>,
    pub dykstra_max_sweeps: usize,
    pub dykstra_tol: T,
    /// Diagonal regularization of the mean KKT system.
    pub kkt_regularization: T,
    /// Frobenius gap above which a covariance solution counts as relaxed.
    pub replay_tol: T,
}

impl<T: Real> Default for BlockSettings<T> {
    fn default() -> Self {
        Self {
            conic: Settings::default(),
            dykstra_max_sweeps: 200,
            dykstra_tol: T::lit(1e-10),
            kkt_regularization: T::lit(1e-9),
            replay_tol: T::lit(1e-5),
        }
    }
}

/// Copies, consensus variables and scaled duals of the splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState<T: Real> {
    pub v: Vec<DVector<T>>,
    pub mu_s: Vec<DVector<T>>,
    pub k: Vec<DMatrix<T>>,
    pub sigma_s: Vec<DMatrix<T>>,
    pub mu_cc: Vec<DVector<T>>,
    pub sigma_cc: Vec<DMatrix<T>>,
    pub mu_cn: Vec<DVector<T>>,
    pub sigma_cn: Vec<DMatrix<T>>,
    pub lambda1: Vec<DVector<T>>,
    pub lambda2: Vec<DVector<T>>,
    pub big_lambda1: Vec<DMatrix<T>>,
    pub big_lambda2: Vec<DMatrix<T>>,
    pub rho: T,
}

impl<T: Real> ConsensusState<T> {
    /// Every copy at the anchor, zero gains and zero duals.
    pub fn from_anchor(anchor: &NominalTrajectory<T>, rho: T) -> Self {
        let n = anchor.x[0].len();
        let m = anchor.u.first().map_or(0, |u| u.len());
        let tf = anchor.horizon();
        let zv = vec![DVector::zeros(n); tf + 1];
        let zm = vec![DMatrix::zeros(n, n); tf + 1];
        Self {
            v: anchor.u.clone(),
            mu_s: anchor.x.clone(),
            k: vec![DMatrix::zeros(m, n); tf],
            sigma_s: anchor.sigma.clone(),
            mu_cc: anchor.x.clone(),
            sigma_cc: anchor.sigma.clone(),
            mu_cn: anchor.x.clone(),
            sigma_cn: anchor.sigma.clone(),
            lambda1: zv.clone(),
            lambda2: zv,
            big_lambda1: zm.clone(),
            big_lambda2: zm,
            rho,
        }
    }

    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    pub fn reset_duals(&mut self) {
        self.lambda1
            .iter_mut()
            .chain(self.lambda2.iter_mut())
            .for_each(|l| l.fill(T::zero()));
        self.big_lambda1
            .iter_mut()
            .chain(self.big_lambda2.iter_mut())
            .for_each(|l| l.fill(T::zero()));
    }

    /// `max(‖μ^s−μ^cn‖∞, ‖μ^cc−μ^cn‖∞, max_t ‖Σ^s−Σ^cn‖_F, max_t ‖Σ^cc−Σ^cn‖_F)`.
    pub fn primal_residual(&self) -> T {
        let mut r = T::zero();
        for t in 0..self.mu_cn.len() {
            r = r
                .max((&self.mu_s[t] - &self.mu_cn[t]).amax())
                .max((&self.mu_cc[t] - &self.mu_cn[t]).amax())
                .max((&self.sigma_s[t] - &self.sigma_cn[t]).norm())
                .max((&self.sigma_cc[t] - &self.sigma_cn[t]).norm());
        }
        r
    }

    /// Prox targets `(μ^cn − λ1/ρ, Σ^cn − Λ1/ρ)` of the dynamics blocks.
    pub fn dynamics_targets(&self) -> (Vec<DVector<T>>, Vec<DMatrix<T>>) {
        self.targets(&self.lambda1, &self.big_lambda1)
    }

    /// Prox targets `(μ^cn − λ2/ρ, Σ^cn − Λ2/ρ)` of the chance block.
    pub fn chance_targets(&self) -> (Vec<DVector<T>>, Vec<DMatrix<T>>) {
        self.targets(&self.lambda2, &self.big_lambda2)
    }

    fn targets(&self, lam: &[DVector<T>], big: &[DMatrix<T>]) -> (Vec<DVector<T>>, Vec<DMatrix<T>>) {
        let inv = T::one() / self.rho;
        (
            self.mu_cn.iter().zip(lam).map(|(c, l)| c - l * inv).collect(),
            self.sigma_cn.iter().zip(big).map(|(c, l)| c - l * inv).collect(),
        )
    }
}

/// Conic solver built on the first solve, so that its cost scaling sees an
/// actual objective rather than the placeholder.
struct LazySolver<T: Real> {
    prog: ConeProgram<T>,
    settings: Settings<T>,
    solver: Option<ConeSolver<T>>,
    warm: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> LazySolver<T> {
    fn new(prog: ConeProgram<T>, settings: Settings<T>) -> Result<Self> {
        prog.validate()?;
        Ok(Self {
            prog,
            settings,
            solver: None,
            warm: None,
        })
    }

    fn program(&self) -> &ConeProgram<T> {
        self.solver.as_ref().map_or(&self.prog, |s| s.program())
    }

    fn set_tolerance(&mut self, tol: T) {
        self.settings.tol = tol;
        if let Some(s) = &mut self.solver {
            s.settings_mut().tol = tol;
        }
    }

    fn warm_start(&mut self, x: &[T], y: &[T]) {
        match &mut self.solver {
            Some(s) => s.warm_start(Some(x), Some(y)),
            None => self.warm = Some((x.to_vec(), y.to_vec())),
        }
    }

    fn solve(&mut self, c: &[T]) -> Result<covsteer_conic::ConeSolution<T>> {
        let solver = match &mut self.solver {
            Some(s) => {
                s.set_linear_objective(c);
                s
            }
            None => {
                self.prog.c.copy_from_slice(c);
                let mut s = ConeSolver::new(self.prog.clone(), self.settings)?;
                if let Some((x, y)) = self.warm.take() {
                    s.warm_start(Some(&x), Some(&y));
                }
                self.solver.insert(s)
            }
        };
        Ok(solver.solve())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanProxOutput<T: Real> {
    pub v: Vec<DVector<T>>,
    pub mu: Vec<DVector<T>>,
    /// `‖E z − e‖∞` of the mean recursion and boundary rows.
    pub equality_residual: T,
}

enum MeanBackend<T: Real> {
    Kkt {
        k0: CscMatrix<T>,
        factor: Box<LdlFactor<T>>,
        e: Vec<T>,
        ematrix: CscMatrix<T>,
    },
    Conic {
        solver: Box<LazySolver<T>>,
        ematrix: CscMatrix<T>,
        e: Vec<T>,
    },
}

/// Mean block with its factorization cached for one local problem.
pub struct MeanProxSolver<T: Real> {
    lay: MeanLayout,
    rho: T,
    backend: MeanBackend<T>,
}

impl<T: Real> MeanProxSolver<T> {
    pub fn new(prob: &LocalProblem<T>, rho: T, settings: &BlockSettings<T>) -> Result<Self> {
        let lay = MeanLayout {
            n: prob.state_dim(),
            m: prob.control_dim(),
            tf: prob.horizon(),
            base: 0,
        };
        let nv = lay.len();
        let mut eq = Vec::new();
        let mut e = Vec::new();
        mean_equalities(prob, &lay, 0, &mut eq, &mut e);
        let neq = e.len();
        let ematrix = CscMatrix::from_triplets(neq, nv, &eq);
        let mut h = Vec::new();
        mean_hessian(prob, &lay, rho, &mut h);

        let backend = match &prob.polytope {
            None => {
                let mut upper = h.clone();
                upper.extend(eq.iter().map(|&(r, c, v)| (c, nv + r, v)));
                let k0 = CscMatrix::from_triplets(nv + neq, nv + neq, &upper);
                let reg = settings.kkt_regularization;
                upper.extend((0..nv).map(|i| (i, i, reg)));
                upper.extend((0..neq).map(|i| (nv + i, nv + i, -reg)));
                let kreg = CscMatrix::from_triplets(nv + neq, nv + neq, &upper);
                let factor = LdlFactor::new(&kreg).map_err(covsteer_conic::ConicError::from)?;
                MeanBackend::Kkt {
                    k0,
                    factor: Box::new(factor),
                    e,
                    ematrix,
                }
            }
            Some(poly) => {
                poly.validate(lay.m)?;
                let mut a = eq.clone();
                let mut b = e.clone();
                let rows = polytope_rows(&poly.gmat, &poly.b_max, &lay, neq, &mut a, &mut b);
                let prog = ConeProgram {
                    p: Some(CscMatrix::from_triplets(nv, nv, &h)),
                    c: vec![T::zero(); nv],
                    a: CscMatrix::from_triplets(neq + rows, nv, &a),
                    b,
                    cones: vec![Cone::Zero(neq), Cone::Nonneg(rows)],
                };
                MeanBackend::Conic {
                    solver: Box::new(LazySolver::new(prog, settings.conic)?),
                    ematrix,
                    e,
                }
            }
        };
        Ok(Self { lay, rho, backend })
    }

    /// Conic stopping tolerance for subsequent solves; no effect on the
    /// direct KKT backend.
    pub fn set_tolerance(&mut self, tol: T) {
        if let MeanBackend::Conic { solver, .. } = &mut self.backend {
            solver.set_tolerance(tol);
        }
    }

    fn linear_term(&self, prob: &LocalProblem<T>, target: &[DVector<T>]) -> Vec<T> {
        let mut g = vec![T::zero(); self.lay.len()];
        for t in 0..=self.lay.tf {
            let off = self.lay.mu(t);
            for i in 0..self.lay.n {
                g[off + i] = prob.cost.lin[t][i] - self.rho * target[t][i];
            }
        }
        g
    }

    /// Minimizes `J_μ + (ρ/2)‖μ − target‖²` over the mean recursion.
    pub fn solve(&mut self, prob: &LocalProblem<T>, target: &[DVector<T>]) -> Result<MeanProxOutput<T>> {
        if target.len() != self.lay.tf + 1 {
            return Err(Error::Dimension("mean target horizon mismatch".into()));
        }
        let g = self.linear_term(prob, target);
        let nv = self.lay.len();
        let limit = match self.backend {
            MeanBackend::Kkt { .. } => T::lit(1e-8),
            MeanBackend::Conic { .. } => T::lit(1e-4),
        };
        let lay = self.lay;
        let (z, ematrix, e) = match &mut self.backend {
            MeanBackend::Kkt { k0, factor, e, ematrix } => {
                let mut rhs: Vec<T> = g.iter().map(|&x| -x).collect();
                rhs.extend_from_slice(e);
                let mut x = rhs.clone();
                factor.solve_in_place(&mut x);
                let scale = T::one() + rhs.iter().fold(T::zero(), |a, v| a.max(v.abs()));
                for _ in 0..30 {
                    let mut r = rhs.clone();
                    k0.symv_upper(-T::one(), &x, &mut r);
                    let rn = r.iter().fold(T::zero(), |a, v| a.max(v.abs()));
                    if rn <= T::default_epsilon() * T::lit(1e3) * scale {
                        break;
                    }
                    factor.solve_in_place(&mut r);
                    x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += *ri);
                }
                x.truncate(nv);
                (x, &*ematrix, &*e)
            }
            MeanBackend::Conic { solver, ematrix, e } => {
                let sol = solver.solve(&g)?;
                match sol.status {
                    SolveStatus::Infeasible => {
                        return Err(Error::InfeasibleMean {
                            residual: sol.residuals.primal.as_f64(),
                        })
                    }
                    SolveStatus::Unbounded => {
                        return Err(Error::InfeasibleMean {
                            residual: f64::INFINITY,
                        });
                    }
                    _ => {}
                }
                (sol.x, &*ematrix, &*e)
            }
        };
        let mut ez = vec![T::zero(); e.len()];
        ematrix.gemv(T::one(), &z, &mut ez);
        let residual = ez.iter().zip(e).fold(T::zero(), |a, (x, y)| a.max((*x - *y).abs()));
        let escale = T::one() + e.iter().chain(&z).fold(T::zero(), |a, v| a.max(v.abs()));
        if !(residual <= limit * escale) {
            return Err(Error::InfeasibleMean {
                residual: residual.as_f64(),
            });
        }
        Ok(MeanProxOutput {
            mu: (0..=lay.tf)
                .map(|t| DVector::from_column_slice(&z[lay.mu(t)..lay.mu(t) + lay.n]))
                .collect(),
            v: (0..lay.tf)
                .map(|t| DVector::from_column_slice(&z[lay.v(t)..lay.v(t) + lay.m]))
                .collect(),
            equality_residual: residual,
        })
    }
}

/// One-shot mean block.
pub fn mean_prox<T: Real>(prob: &LocalProblem<T>, target: &[DVector<T>], rho: T) -> Result<MeanProxOutput<T>> {
    MeanProxSolver::new(prob, rho, &BlockSettings::default())?.solve(prob, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovProxOutput<T: Real> {
    pub k: Vec<DMatrix<T>>,
    pub sigma: Vec<DMatrix<T>>,
    /// Largest Frobenius gap between `Σ^s_{t+1}` and the recursion replayed
    /// with the recovered gains.
    pub replay_gap: T,
    /// Set when the relaxation is not tight at the returned point.
    pub relaxed: bool,
    pub conic_status: SolveStatus,
    pub conic_iterations: usize,
}

/// Covariance block; keeps one conic solver per local problem so that only
/// the linear objective changes between calls and iterates carry over.
pub struct CovProxSolver<T: Real> {
    lay: CovLayout,
    rho: T,
    replay_tol: T,
    solver: LazySolver<T>,
    last: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> CovProxSolver<T> {
    pub fn new(prob: &LocalProblem<T>, rho: T, settings: &BlockSettings<T>) -> Result<Self> {
        let lay = CovLayout {
            n: prob.state_dim(),
            m: prob.control_dim(),
            tf: prob.horizon(),
            base: 0,
        };
        let nv = lay.len();
        let mut a = Triplets::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let rows = cov_constraints(prob, &lay, 0, &mut a, &mut b, &mut cones);
        let mut p = Triplets::new();
        cov_hessian(&lay, rho, &mut p);
        let prog = ConeProgram {
            p: Some(CscMatrix::from_triplets(nv, nv, &p)),
            c: vec![T::zero(); nv],
            a: CscMatrix::from_triplets(rows, nv, &a),
            b,
            cones,
        };
        Ok(Self {
            lay,
            rho,
            replay_tol: settings.replay_tol,
            solver: LazySolver::new(prog, settings.conic)?,
            last: None,
        })
    }

    pub fn program(&self) -> &ConeProgram<T> {
        self.solver.program()
    }

    /// Conic stopping tolerance for subsequent solves.
    pub fn set_tolerance(&mut self, tol: T) {
        self.solver.set_tolerance(tol);
    }

    /// Primal and dual vectors of the latest solve.
    pub fn last_iterate(&self) -> Option<(&[T], &[T])> {
        self.last.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice()))
    }

    /// Starts the next solve from a point of a program with the same layout,
    /// such as the previous local problem's solution.
    pub fn warm_start(&mut self, x: &[T], y: &[T]) {
        if x.len() == self.program().n() && y.len() == self.program().m() {
            self.solver.warm_start(x, y);
        }
    }

    /// Minimizes `J_Σ + (ρ/2)Σ_t‖Σ_t − target_t‖_F²` over the relaxed recursion.
    pub fn solve(&mut self, prob: &LocalProblem<T>, target: &[DMatrix<T>]) -> Result<CovProxOutput<T>> {
        if target.len() != self.lay.tf + 1 {
            return Err(Error::Dimension("covariance target horizon mismatch".into()));
        }
        let mut c = vec![T::zero(); self.lay.len()];
        cov_linear_objective(prob, &self.lay, self.rho, target, &mut c);
        let sol = self.solver.solve(&c)?;
        match sol.status {
            SolveStatus::Infeasible => return Err(Error::InfeasibleCovariance),
            SolveStatus::Unbounded => {
                return Err(Error::Conic(covsteer_conic::ConicError::Dimension(
                    "covariance block reported an unbounded objective".into(),
                )))
            }
            _ => {}
        }
        let (k, sigma) = recover_gains(prob, &self.lay, &sol.x)?;
        self.last = Some((sol.x.clone(), sol.y.clone()));
        let replay_gap = replay_gap(prob, &k, &sigma);
        Ok(CovProxOutput {
            relaxed: replay_gap > self.replay_tol,
            k,
            sigma,
            replay_gap,
            conic_status: sol.status,
            conic_iterations: sol.iterations,
        })
    }
}

/// One-shot covariance block.
pub fn cov_prox<T: Real>(prob: &LocalProblem<T>, target: &[DMatrix<T>], rho: T) -> Result<CovProxOutput<T>> {
    CovProxSolver::new(prob, rho, &BlockSettings::default())?.solve(prob, target)
}

const PD_MARGIN: f64 = 1e-9;

fn clamp_pd<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(m).symmetric_eigen();
    let floor = T::lit(PD_MARGIN);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return symmetrize(m);
    }
    let l = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&l) * eig.eigenvectors.transpose()))
}

/// `K_t = U_t Σ_t⁻¹` from the stacked solution vector.
pub(crate) fn recover_gains<T: Real>(
    prob: &LocalProblem<T>,
    lay: &CovLayout,
    x: &[T],
) -> Result<(Vec<DMatrix<T>>, Vec<DMatrix<T>>)> {
    let (n, m, tf) = (lay.n, lay.m, lay.tf);
    let mut sigma = Vec::with_capacity(tf + 1);
    sigma.push(symmetrize(&prob.boundary.sigma_ic));
    for t in 1..=tf {
        let off = lay.sigma(t).expect("t ≥ 1");
        sigma.push(clamp_pd(&smat(&x[off..off + lay.ns()], n)));
    }
    let k = (0..tf)
        .map(|t| {
            let u = DMatrix::from_column_slice(m, n, &x[lay.u(t)..lay.u(t) + m * n]);
            let inv = sigma[t].clone().try_inverse().ok_or(Error::Recovery { t })?;
            let k = u * inv;
            if k.iter().all(|v| v.is_finite()) {
                Ok(k)
            } else {
                Err(Error::Recovery { t })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((k, sigma))
}

pub(crate) fn replay_gap<T: Real>(prob: &LocalProblem<T>, k: &[DMatrix<T>], sigma: &[DMatrix<T>]) -> T {
    prob.lin.iter().enumerate().fold(T::zero(), |acc, (t, lin)| {
        acc.max((propagate_cov(lin, &sigma[t], &k[t]) - &sigma[t + 1]).norm())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceProxOutput<T: Real> {
    pub mu: Vec<DVector<T>>,
    pub sigma: Vec<DMatrix<T>>,
    /// Largest number of Dykstra sweeps used at any step.
    pub sweeps: usize,
    /// False when some step hit the sweep limit.
    pub converged: bool,
}

/// Projection onto the linearized chance constraints, one Dykstra run per
/// constrained step; unconstrained steps pass through.
pub fn chance_prox<T: Real>(
    groups: &[ConstraintGroup<T>],
    target_mu: &[DVector<T>],
    target_sigma: &[DMatrix<T>],
    settings: &BlockSettings<T>,
) -> ChanceProxOutput<T> {
    let mut mu = target_mu.to_vec();
    let mut sigma: Vec<DMatrix<T>> = target_sigma.iter().map(symmetrize).collect();
    let results: Vec<(usize, DVector<T>, DMatrix<T>, usize, bool)> = groups
        .par_iter()
        .map(|g| {
            let (m, s, sweeps, ok) = dykstra(g, &mu[g.t], &sigma[g.t], settings);
            (g.t, m, s, sweeps, ok)
        })
        .collect();
    let mut sweeps = 0;
    let mut converged = true;
    for (t, m, s, k, ok) in results {
        mu[t] = m;
        sigma[t] = s;
        sweeps = sweeps.max(k);
        converged &= ok;
    }
    ChanceProxOutput {
        mu,
        sigma,
        sweeps,
        converged,
    }
}

fn dykstra<T: Real>(
    group: &ConstraintGroup<T>,
    mu0: &DVector<T>,
    sigma0: &DMatrix<T>,
    settings: &BlockSettings<T>,
) -> (DVector<T>, DMatrix<T>, usize, bool) {
    let cons = &group.constraints;
    let mut mu = mu0.clone();
    let mut sigma = sigma0.clone();
    if cons.iter().all(|c| c.eval(&mu, &sigma) <= T::zero()) {
        return (mu, sigma, 0, true);
    }
    let norms: Vec<T> = cons.iter().map(|c| c.w.norm_squared() + c.g.norm_squared()).collect();
    let mut pm = vec![DVector::zeros(mu.len()); cons.len()];
    let mut ps = vec![DMatrix::zeros(sigma.nrows(), sigma.ncols()); cons.len()];
    for sweep in 1..=settings.dykstra_max_sweeps {
        let mut change = T::zero();
        for (i, c) in cons.iter().enumerate() {
            let ym = &mu + &pm[i];
            let ys = &sigma + &ps[i];
            let viol = c.eval(&ym, &ys);
            let (nm, ns) = if viol > T::zero() && norms[i] > T::zero() {
                let step = viol / norms[i];
                (&ym - &c.w * step, symmetrize(&(&ys - &c.g * step)))
            } else {
                (ym.clone(), ys.clone())
            };
            change += (&nm - &mu).norm_squared() + (&ns - &sigma).norm_squared();
            pm[i] = ym - &nm;
            ps[i] = ys - &ns;
            mu = nm;
            sigma = ns;
        }
        if change.sqrt() < settings.dykstra_tol {
            return (mu, sigma, sweep, true);
        }
    }
    (mu, sigma, settings.dykstra_max_sweeps, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AveragingMode {
    /// Plain average of the two copies.
    PaperExact,
    /// Exact minimizer of the augmented Lagrangian in the consensus variable.
    #[default]
    Weighted,
}

pub fn consensus_update<T: Real>(
    state: &mut ConsensusState<T>,
    weights: ProxWeights<T>,
    anchor: &NominalTrajectory<T>,
    mode: AveragingMode,
) {
    let rho = state.rho;
    let half = T::lit(0.5);
    for t in 0..state.mu_cn.len() {
        match mode {
            AveragingMode::PaperExact => {
                state.mu_cn[t] = (&state.mu_s[t] + &state.mu_cc[t]) * half;
                state.sigma_cn[t] = symmetrize(&((&state.sigma_s[t] + &state.sigma_cc[t]) * half));
            }
            AveragingMode::Weighted => {
                let dm = weights.alpha_mu + rho + rho;
                state.mu_cn[t] = (&anchor.x[t] * weights.alpha_mu
                    + (&state.mu_s[t] + &state.mu_cc[t]) * rho
                    + &state.lambda1[t]
                    + &state.lambda2[t])
                    / dm;
                let ds = weights.alpha_sigma + rho + rho;
                let s = (&anchor.sigma[t] * weights.alpha_sigma
                    + (&state.sigma_s[t] + &state.sigma_cc[t]) * rho
                    + &state.big_lambda1[t]
                    + &state.big_lambda2[t])
                    / ds;
                state.sigma_cn[t] = symmetrize(&s);
            }
        }
    }
}

pub fn dual_update<T: Real>(state: &mut ConsensusState<T>) {
    let rho = state.rho;
    for t in 0..state.mu_cn.len() {
        state.lambda1[t] += (&state.mu_s[t] - &state.mu_cn[t]) * rho;
        state.lambda2[t] += (&state.mu_cc[t] - &state.mu_cn[t]) * rho;
        let l1 = &state.big_lambda1[t] + (&state.sigma_s[t] - &state.sigma_cn[t]) * rho;
        let l2 = &state.big_lambda2[t] + (&state.sigma_cc[t] - &state.sigma_cn[t]) * rho;
        state.big_lambda1[t] = symmetrize(&l1);
        state.big_lambda2[t] = symmetrize(&l2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(mu_s: f64, mu_cc: f64, mu_cn: f64, rho: f64) -> ConsensusState<f64> {
        let anchor = NominalTrajectory {
            x: vec![DVector::from_element(1, mu_cn)],
            u: vec![],
            sigma: vec![DMatrix::zeros(1, 1)],
        };
        let mut s = ConsensusState::from_anchor(&anchor, rho);
        s.mu_s[0][0] = mu_s;
        s.mu_cc[0][0] = mu_cc;
        s
    }

    #[test]
    fn scalar_dual_step() {
        let mut s = scalar_state(1.0, 0.0, 0.5, 2.0);
        dual_update(&mut s);
        assert_eq!(s.lambda1[0][0], 1.0);
        assert_eq!(s.lambda2[0][0], -1.0);
    }

    #[test]
    fn plain_average_of_equal_copies() {
        let mut s = scalar_state(0.7, 0.7, 0.0, 1.0);
        let anchor = NominalTrajectory {
            x: vec![DVector::from_element(1, 0.0)],
            u: vec![],
            sigma: vec![DMatrix::zeros(1, 1)],
        };
        consensus_update(&mut s, ProxWeights::default(), &anchor, AveragingMode::PaperExact);
        assert_eq!(s.mu_cn[0][0], 0.7);
    }
}
