//! Obstacle constraints, risk allocation and Gaussian tightening.
//!
//! Sign conventions: an obstacle's `h` is positive outside and `h ≤ 0` is
//! the forbidden set. A [`TightenedHalfplane`] is stored on the safe side,
//! i.e. `aᵀx + b ≤ 0` is the linearized free region, so the deterministic
//! constraint is `g(μ, Σ) = aᵀμ + b + Φ⁻¹(1−δ′)·√(aᵀΣa) ≤ 0`.

use crate::error::{Error, Result};
use crate::models::NominalTrajectory;
use covsteer_conic::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T: Real> {
    Circle {
        center: DVector<T>,
        radius: T,
    },
    Sphere {
        center: DVector<T>,
        radius: T,
    },
    /// Forbidden side `normalᵀx + offset ≤ 0`.
    Halfspace {
        normal: DVector<T>,
        offset: T,
    },
}

/// A shape living in the state coordinates listed in `coords`.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle<T: Real> {
    pub shape: Shape<T>,
    pub coords: Vec<usize>,
}

impl<T: Real> Obstacle<T> {
    pub fn circle(center: [T; 2], radius: T, coords: [usize; 2]) -> Self {
        Self {
            shape: Shape::Circle {
                center: DVector::from_column_slice(&center),
                radius,
            },
            coords: coords.to_vec(),
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let (dim, ok) = match &self.shape {
            Shape::Circle { center, radius } | Shape::Sphere { center, radius } => (center.len(), *radius > T::zero()),
            Shape::Halfspace { normal, .. } => (normal.len(), normal.norm() > T::zero()),
        };
        if !ok {
            return Err(Error::Config(
                "obstacle radius must be positive and normals nonzero".into(),
            ));
        }
        if dim != self.coords.len() || self.coords.iter().any(|&c| c >= state_dim) {
            return Err(Error::Dimension(format!(
                "obstacle coordinates {:?} do not fit a {dim}-dimensional shape in a {state_dim}-state model",
                self.coords
            )));
        }
        Ok(())
    }

    fn project(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|&i| x[i]))
    }

    /// Grows (or shrinks) a ball obstacle by `delta`; halfspaces are shifted.
    pub fn inflated(&self, delta: T) -> Self {
        let shape = match &self.shape {
            Shape::Circle { center, radius } => Shape::Circle {
                center: center.clone(),
                radius: *radius + delta,
            },
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: center.clone(),
                radius: *radius + delta,
            },
            Shape::Halfspace { normal, offset } => Shape::Halfspace {
                normal: normal.clone(),
                offset: *offset - delta * normal.norm(),
            },
        };
        Self {
            shape,
            coords: self.coords.clone(),
        }
    }
}

/// `h(x)`: negative inside the obstacle, zero on its boundary.
pub fn signed_distance<T: Real>(obs: &Obstacle<T>, x: &DVector<T>) -> T {
    let p = obs.project(x);
    match &obs.shape {
        Shape::Circle { center, radius } | Shape::Sphere { center, radius } => (p - center).norm() - *radius,
        Shape::Halfspace { normal, offset } => normal.dot(&p) + *offset,
    }
}

/// `(a, b)` with `a = ∇h(x̄)` and `b = h(x̄) − aᵀx̄`; the linearized forbidden
/// region is `{aᵀx + b ≤ 0}`.
pub fn linearize_obstacle<T: Real>(obs: &Obstacle<T>, x: &DVector<T>) -> Result<(DVector<T>, T)> {
    let p = obs.project(x);
    let grad_p = match &obs.shape {
        Shape::Circle { center, .. } | Shape::Sphere { center, .. } => {
            let diff = p - center;
            let norm = diff.norm();
            if norm < T::lit(1e-9) {
                return Err(Error::DegenerateGradient { obstacle: 0, t: 0 });
            }
            diff / norm
        }
        Shape::Halfspace { normal, .. } => normal.clone(),
    };
    let mut a = DVector::zeros(x.len());
    for (k, &i) in obs.coords.iter().enumerate() {
        a[i] += grad_p[k];
    }
    let b = signed_distance(obs, x) - a.dot(x);
    Ok((a, b))
}

// Acklam's rational approximation, relative error below 1.2e-9.
const ACK_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACK_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACK_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACK_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn acklam(p: f64) -> f64 {
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACK_C[0] * q + ACK_C[1]) * q + ACK_C[2]) * q + ACK_C[3]) * q + ACK_C[4]) * q + ACK_C[5])
            / ((((ACK_D[0] * q + ACK_D[1]) * q + ACK_D[2]) * q + ACK_D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((ACK_A[0] * r + ACK_A[1]) * r + ACK_A[2]) * r + ACK_A[3]) * r + ACK_A[4]) * r + ACK_A[5]) * q
            / (((((ACK_B[0] * r + ACK_B[1]) * r + ACK_B[2]) * r + ACK_B[3]) * r + ACK_B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Standard normal CDF.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Lower-tail quantile for `p ≤ 0.5`: rational start, two Newton steps.
fn lower_quantile(p: f64) -> f64 {
    let mut x = acklam(p);
    for _ in 0..2 {
        x -= (gaussian_cdf(x) - p) / gaussian_pdf(x);
    }
    x
}

/// `Φ⁻¹(p)`.
pub fn gaussian_quantile<T: Real>(p: T) -> Result<T> {
    let p = p.as_f64();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(p));
    }
    let x = if p <= 0.5 {
        lower_quantile(p)
    } else {
        -lower_quantile(1.0 - p)
    };
    Ok(T::lit(x))
}

/// Safe-side halfplane with its risk budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedHalfplane<T: Real> {
    pub a: DVector<T>,
    pub b: T,
    pub delta_prime: T,
}

impl<T: Real> TightenedHalfplane<T> {
    /// Flips an obstacle linearization (forbidden side `aᵀx + b ≤ 0`) to the
    /// safe-side convention.
    pub fn from_obstacle(a: &DVector<T>, b: T, delta_prime: T) -> Self {
        Self {
            a: -a,
            b: -b,
            delta_prime,
        }
    }

    pub fn quantile(&self) -> Result<T> {
        gaussian_quantile(T::one() - self.delta_prime)
    }
}

fn normal_variance<T: Real>(a: &DVector<T>, sigma: &DMatrix<T>) -> Result<T> {
    let var = (sigma * a).dot(a);
    if var < T::lit(-1e-12) {
        return Err(Error::PsdViolation(var.as_f64()));
    }
    Ok(var.max(T::zero()))
}

/// `g(μ, Σ) = aᵀμ + b + Φ⁻¹(1−δ′)·√(aᵀΣa)`.
pub fn tightened_constraint_value<T: Real>(
    hp: &TightenedHalfplane<T>,
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
) -> Result<T> {
    let var = normal_variance(&hp.a, sigma)?;
    Ok(hp.a.dot(mu) + hp.b + hp.quantile()? * var.sqrt())
}

/// `ḡ(μ, Σ) = c + wᵀμ + ⟨G, Σ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedChanceConstraint<T: Real> {
    pub c: T,
    pub w: DVector<T>,
    pub g: DMatrix<T>,
}

impl<T: Real> LinearizedChanceConstraint<T> {
    pub fn eval(&self, mu: &DVector<T>, sigma: &DMatrix<T>) -> T {
        self.c + self.w.dot(mu) + self.g.dot(sigma)
    }
}

/// Tangent of `g` at `(μ̄, Σ̄)`. When `aᵀΣ̄a ≤ 1e-12` the square root has no
/// gradient and the Σ-independent halfplane (`G = 0`) is returned instead.
pub fn linearize_tightened<T: Real>(
    hp: &TightenedHalfplane<T>,
    mu_bar: &DVector<T>,
    sigma_bar: &DMatrix<T>,
) -> Result<LinearizedChanceConstraint<T>> {
    let var = normal_variance(&hp.a, sigma_bar)?;
    let value = tightened_constraint_value(hp, mu_bar, sigma_bar)?;
    let n = hp.a.len();
    let g = if var > T::lit(1e-12) {
        let scale = hp.quantile()? / (T::lit(2.0) * var.sqrt());
        let outer = &hp.a * hp.a.transpose() * scale;
        crate::models::symmetrize(&outer)
    } else {
        DMatrix::zeros(n, n)
    };
    let w = hp.a.clone();
    let c = value - w.dot(mu_bar) - g.dot(sigma_bar);
    Ok(LinearizedChanceConstraint { c, w, g })
}

/// Boole split of a joint risk `δ` over `N` constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBudget<T> {
    pub delta: T,
    pub n_constraints: usize,
    pub delta_prime: T,
}

impl<T: Real> RiskBudget<T> {
    /// Joint risk `δ` shared uniformly: `δ′ = δ/N`.
    pub fn joint(delta: T, n_constraints: usize) -> Result<Self> {
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::Config(format!("risk δ = {} outside (0, 1)", delta.as_f64())));
        }
        let delta_prime = delta / T::from_usize_lossy(n_constraints.max(1));
        Self::checked(delta, n_constraints, delta_prime)
    }

    /// Per-constraint risk `δ′` given directly; `δ = N·δ′`.
    pub fn per_constraint(delta_prime: T, n_constraints: usize) -> Result<Self> {
        let delta = delta_prime * T::from_usize_lossy(n_constraints.max(1));
        Self::checked(delta, n_constraints, delta_prime)
    }

    fn checked(delta: T, n_constraints: usize, delta_prime: T) -> Result<Self> {
        if !(delta_prime > T::zero() && delta_prime < T::lit(0.5)) {
            return Err(Error::Config(format!(
                "per-constraint risk δ′ = {} outside (0, 0.5)",
                delta_prime.as_f64()
            )));
        }
        Ok(Self {
            delta,
            n_constraints,
            delta_prime,
        })
    }
}

/// The linearized constraints `𝒢_t` active at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGroup<T: Real> {
    pub t: usize,
    pub halfplanes: Vec<TightenedHalfplane<T>>,
    pub constraints: Vec<LinearizedChanceConstraint<T>>,
}

/// Linearized chance constraints at the interior steps `t = 1..t_f−1`.
pub fn build_constraint_sets<T: Real>(
    obstacles: &[Obstacle<T>],
    budget: &RiskBudget<T>,
    nominal: &NominalTrajectory<T>,
) -> Result<Vec<ConstraintGroup<T>>> {
    if budget.n_constraints != obstacles.len() {
        return Err(Error::Config(format!(
            "risk budget covers {} constraints, scenario has {} obstacles",
            budget.n_constraints,
            obstacles.len()
        )));
    }
    if obstacles.is_empty() {
        return Ok(Vec::new());
    }
    let tf = nominal.horizon();
    (1..tf)
        .into_par_iter()
        .map(|t| {
            let mut halfplanes = Vec::with_capacity(obstacles.len());
            let mut constraints = Vec::with_capacity(obstacles.len());
            for (i, obs) in obstacles.iter().enumerate() {
                let (a, b) = linearize_obstacle(obs, &nominal.x[t]).map_err(|e| match e {
                    Error::DegenerateGradient { .. } => Error::DegenerateGradient { obstacle: i, t },
                    other => other,
                })?;
                let hp = TightenedHalfplane::from_obstacle(&a, b, budget.delta_prime);
                constraints.push(linearize_tightened(&hp, &nominal.x[t], &nominal.sigma[t])?);
                halfplanes.push(hp);
            }
            Ok(ConstraintGroup {
                t,
                halfplanes,
                constraints,
            })
        })
        .collect()
}

/// `max(0, max ḡ)` over all groups at the given moments.
pub fn max_violation<T: Real>(groups: &[ConstraintGroup<T>], mu: &[DVector<T>], sigma: &[DMatrix<T>]) -> T {
    groups.iter().fold(T::zero(), |acc, grp| {
        grp.constraints
            .iter()
            .fold(acc, |a, c| a.max(c.eval(&mu[grp.t], &sigma[grp.t])))
    })
}
