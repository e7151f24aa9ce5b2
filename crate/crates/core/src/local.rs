//! The local convex problem around a nominal trajectory.

use crate::blocks::ControlPolytope;
use crate::chance::{build_constraint_sets, ConstraintGroup};
use crate::error::{Error, Result};
use crate::models::{linearize_trajectory, symmetrize, LinearizedDynamics, NominalTrajectory};
use crate::scenario::{Boundary, Scenario};
use covsteer_conic::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Twice-differentiable state cost `c(x)`.
pub trait StateCost<T: Real>: Send + Sync + std::fmt::Debug {
    fn value(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T>;
}

/// `c(x) = ½ (x − goal)ᵀ Q (x − goal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStateCost<T: Real> {
    pub q: DMatrix<T>,
    pub goal: DVector<T>,
}

impl<T: Real> StateCost<T> for QuadraticStateCost<T> {
    fn value(&self, x: &DVector<T>) -> T {
        let e = x - &self.goal;
        T::lit(0.5) * (&self.q * &e).dot(&e)
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        &self.q * (x - &self.goal)
    }
    fn hessian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.q.clone()
    }
}

/// Second-order model `c̄_t(μ, v) = ½(μᵀQ_tμ + vᵀRv) + q_tᵀμ + c0_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost<T: Real> {
    pub q: Vec<DMatrix<T>>,
    pub lin: Vec<DVector<T>>,
    pub c0: Vec<T>,
    pub r: DMatrix<T>,
}

/// Expansion of `c` at every `x̄_t`. Hessians are symmetrized and their
/// negative eigenvalues dropped so the model stays convex; the linear and
/// constant terms make the model match `c` and `∇c` at `x̄_t`.
pub fn expand_cost<T: Real>(
    cost: &dyn StateCost<T>,
    r: &DMatrix<T>,
    nominal: &NominalTrajectory<T>,
) -> Result<QuadraticCost<T>> {
    let terms: Vec<(DMatrix<T>, DVector<T>, T)> = nominal
        .x
        .par_iter()
        .enumerate()
        .map(|(t, x)| {
            let h = symmetrize(&cost.hessian(x));
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::Expansion { t });
            }
            let eig = h.clone().symmetric_eigen();
            let h = if eig.eigenvalues.iter().all(|&l| l >= T::zero()) {
                h
            } else {
                let clamped = eig.eigenvalues.map(|l| l.max(T::zero()));
                symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
            };
            let grad = cost.gradient(x);
            let hx = &h * x;
            let lin = &grad - &hx;
            let c0 = cost.value(x) - grad.dot(x) + T::lit(0.5) * hx.dot(x);
            Ok((h, lin, c0))
        })
        .collect::<Result<_>>()?;
    let mut out = QuadraticCost {
        q: Vec::with_capacity(terms.len()),
        lin: Vec::with_capacity(terms.len()),
        c0: Vec::with_capacity(terms.len()),
        r: r.clone(),
    };
    for (h, l, c) in terms {
        out.q.push(h);
        out.lin.push(l);
        out.c0.push(c);
    }
    Ok(out)
}

/// `J_μ`: the `μ` terms run over `mu`, the control terms over `v`.
pub fn mean_objective<T: Real>(cost: &QuadraticCost<T>, mu: &[DVector<T>], v: &[DVector<T>]) -> T {
    let half = T::lit(0.5);
    let state = mu.iter().enumerate().fold(T::zero(), |acc, (t, m)| {
        acc + half * (&cost.q[t] * m).dot(m) + cost.lin[t].dot(m) + cost.c0[t]
    });
    v.iter().fold(state, |acc, vt| acc + half * (&cost.r * vt).dot(vt))
}

/// `J_Σ = Σ_t trace(Q_tΣ_t) + trace(R K_t Σ_t K_tᵀ)`.
pub fn cov_objective<T: Real>(cost: &QuadraticCost<T>, sigma: &[DMatrix<T>], k: &[DMatrix<T>]) -> T {
    let state = sigma
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (t, s)| acc + cost.q[t].dot(s));
    k.iter().enumerate().fold(state, |acc, (t, kt)| {
        acc + (&cost.r * kt * &sigma[t] * kt.transpose()).trace()
    })
}

/// Proximal weights `(α_μ, α_Σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxWeights<T> {
    pub alpha_mu: T,
    pub alpha_sigma: T,
}

impl<T: Real> Default for ProxWeights<T> {
    fn default() -> Self {
        Self {
            alpha_mu: T::one(),
            alpha_sigma: T::one(),
        }
    }
}

/// `J_px = Σ_t (α_μ/2)‖μ_t − x̄_t‖² + (α_Σ/2)‖Σ_t − Σ̄_t‖_F²`.
pub fn prox_objective<T: Real>(
    weights: ProxWeights<T>,
    mu: &[DVector<T>],
    sigma: &[DMatrix<T>],
    anchor: &NominalTrajectory<T>,
) -> T {
    let half = T::lit(0.5);
    let m = mu
        .iter()
        .zip(&anchor.x)
        .fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_squared());
    let s = sigma
        .iter()
        .zip(&anchor.sigma)
        .fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_squared());
    half * weights.alpha_mu * m + half * weights.alpha_sigma * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalCovMode {
    Equality,
    /// `Σ_{t_f} ⪯ Σ_tc`.
    #[default]
    Inequality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalProblem<T: Real> {
    pub lin: Vec<LinearizedDynamics<T>>,
    pub cost: QuadraticCost<T>,
    pub constraints: Vec<ConstraintGroup<T>>,
    pub boundary: Boundary<T>,
    pub terminal_mode: TerminalCovMode,
    pub prox: ProxWeights<T>,
    pub polytope: Option<ControlPolytope<T>>,
    pub anchor: NominalTrajectory<T>,
}

impl<T: Real> LocalProblem<T> {
    pub fn horizon(&self) -> usize {
        self.lin.len()
    }

    pub fn state_dim(&self) -> usize {
        self.boundary.mu_ic.len()
    }

    pub fn control_dim(&self) -> usize {
        self.cost.r.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.lin.first().map_or(0, |l| l.noise.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let tf = self.horizon();
        if tf == 0 {
            return Err(Error::Config("empty horizon".into()));
        }
        if self.cost.q.len() != tf + 1 || self.anchor.x.len() != tf + 1 || self.anchor.sigma.len() != tf + 1 {
            return Err(Error::Dimension("local problem horizons disagree".into()));
        }
        if self.constraints.iter().any(|g| g.t == 0 || g.t >= tf) {
            return Err(Error::Config("chance constraints only apply at interior steps".into()));
        }
        Ok(())
    }
}

/// Assembles the local problem around `nominal`.
pub fn build_local_problem<T: Real>(
    scenario: &Scenario<T>,
    terminal_mode: TerminalCovMode,
    prox: ProxWeights<T>,
    nominal: &NominalTrajectory<T>,
) -> Result<LocalProblem<T>> {
    if nominal.horizon() != scenario.horizon {
        return Err(Error::Dimension(format!(
            "nominal horizon {} differs from scenario horizon {}",
            nominal.horizon(),
            scenario.horizon
        )));
    }
    let lin = linearize_trajectory(scenario.model.as_ref(), nominal)?;
    let cost = expand_cost(scenario.state_cost.as_ref(), &scenario.r, nominal)?;
    let constraints = build_constraint_sets(&scenario.obstacles, &scenario.budget, nominal)?;
    Ok(LocalProblem {
        lin,
        cost,
        constraints,
        boundary: scenario.boundary.clone(),
        terminal_mode,
        prox,
        polytope: scenario.polytope.clone(),
        anchor: nominal.clone(),
    })
}
