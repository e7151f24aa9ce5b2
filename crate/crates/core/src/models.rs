//! Dynamics catalog, first-order expansion and Gaussian moment propagation.
//!
//! All catalog models are explicit-Euler discretizations `x' = x + dt·f(x, u)`
//! of control-affine vector fields, with analytic Jacobians.

use crate::error::{Error, Result};
use crate::noise::{keyed_rng, standard_normal};
use covsteer_conic::Real;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Discrete-time stochastic dynamics `X' = f(X, u) + D(X) W`, `W ~ N(0, I_p)`.
///
/// Implementing this trait is also the hook for user-supplied models: the
/// default [`DynamicsModel::jacobians`] falls back to central differences,
/// and can be overridden with exact derivatives.
pub trait DynamicsModel<T: Real>: Send + Sync + std::fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn dt(&self) -> T;
    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T>;
    fn diffusion(&self, x: &DVector<T>) -> DMatrix<T>;

    /// `(∂f/∂x, ∂f/∂u)` at `(x, u)`.
    fn jacobians(&self, x: &DVector<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        fd::jacobians(self, x, u, T::lit(1e-6))
    }

    fn name(&self) -> &str {
        "external"
    }
}

/// Noise channel of a catalog model.
#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion<T> {
    /// State-independent `n × p` matrix.
    Constant(DMatrix<T>),
    /// `σ · ∂f/∂u(x, 0)`: noise enters through the actuators.
    ControlChannel(T),
}

impl<T: Real> Diffusion<T> {
    fn eval(&self, control_matrix: impl FnOnce() -> DMatrix<T>) -> DMatrix<T> {
        match self {
            Diffusion::Constant(d) => d.clone(),
            Diffusion::ControlChannel(s) => control_matrix() * *s,
        }
    }

    fn cols(&self, m: usize) -> usize {
        match self {
            Diffusion::Constant(d) => d.ncols(),
            Diffusion::ControlChannel(_) => m,
        }
    }
}

/// Point mass in `dim` spatial dimensions; state `(p, v)`, input acceleration.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator<T> {
    pub dim: usize,
    pub dt: T,
    pub diffusion: Diffusion<T>,
}

impl<T: Real> DoubleIntegrator<T> {
    pub fn planar(dt: T, diffusion: Diffusion<T>) -> Self {
        Self { dim: 2, dt, diffusion }
    }

    pub fn a(&self) -> DMatrix<T> {
        let k = self.dim;
        let mut a = DMatrix::identity(2 * k, 2 * k);
        for i in 0..k {
            a[(i, k + i)] = self.dt;
        }
        a
    }

    pub fn b(&self) -> DMatrix<T> {
        let k = self.dim;
        let mut b = DMatrix::zeros(2 * k, k);
        for i in 0..k {
            b[(k + i, i)] = self.dt;
        }
        b
    }
}

impl<T: Real> DynamicsModel<T> for DoubleIntegrator<T> {
    fn state_dim(&self) -> usize {
        2 * self.dim
    }
    fn control_dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.diffusion.cols(self.dim)
    }
    fn dt(&self) -> T {
        self.dt
    }
    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        self.a() * x + self.b() * u
    }
    fn diffusion(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.diffusion.eval(|| self.b())
    }
    fn jacobians(&self, _x: &DVector<T>, _u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        (self.a(), self.b())
    }
    fn name(&self) -> &str {
        "double_integrator"
    }
}

/// Planar unicycle: state `(x, y, θ)`, input `(v, ω)`.
#[derive(Debug, Clone)]
pub struct Unicycle<T> {
    pub dt: T,
    pub diffusion: Diffusion<T>,
}

impl<T: Real> Unicycle<T> {
    fn control_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        DMatrix::from_row_slice(3, 2, &[dt * c, T::zero(), dt * s, T::zero(), T::zero(), dt])
    }
}

impl<T: Real> DynamicsModel<T> for Unicycle<T> {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        self.diffusion.cols(2)
    }
    fn dt(&self) -> T {
        self.dt
    }
    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        DVector::from_column_slice(&[x[0] + dt * u[0] * c, x[1] + dt * u[0] * s, x[2] + dt * u[1]])
    }
    fn diffusion(&self, x: &DVector<T>) -> DMatrix<T> {
        self.diffusion.eval(|| self.control_matrix(x))
    }
    fn jacobians(&self, x: &DVector<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let (s, c) = x[2].sin_cos();
        let dt = self.dt;
        let mut a = DMatrix::identity(3, 3);
        a[(0, 2)] = -dt * u[0] * s;
        a[(1, 2)] = dt * u[0] * c;
        (a, self.control_matrix(x))
    }
    fn name(&self) -> &str {
        "unicycle"
    }
}

/// Rigid-body parameters of the quadrotor model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams<T> {
    pub mass: T,
    pub gravity: T,
    /// Principal moments of inertia.
    pub inertia: [T; 3],
}

impl<T: Real> Default for QuadrotorParams<T> {
    fn default() -> Self {
        Self {
            mass: T::one(),
            gravity: T::lit(9.81),
            inertia: [T::lit(0.1), T::lit(0.1), T::lit(0.2)],
        }
    }
}

/// 12-state quadrotor: position, velocity, ZYX Euler angles `(φ, θ, ψ)` and
/// body rates. Inputs are the collective thrust offset from hover (force
/// units) and the three body torques, so `u = 0` hovers.
#[derive(Debug, Clone)]
pub struct Quadrotor<T> {
    pub dt: T,
    pub params: QuadrotorParams<T>,
    pub diffusion: Diffusion<T>,
}

impl<T: Real> Quadrotor<T> {
    /// Continuous-time vector field.
    fn field(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let p = &self.params;
        let (sf, cf) = x[6].sin_cos();
        let (st, ct) = x[7].sin_cos();
        let (sp, cp) = x[8].sin_cos();
        let tt = st / ct;
        let (wx, wy, wz) = (x[9], x[10], x[11]);
        let [j1, j2, j3] = p.inertia;
        let acc = p.gravity + u[0] / p.mass;
        let mut f = DVector::zeros(12);
        f[0] = x[3];
        f[1] = x[4];
        f[2] = x[5];
        f[3] = acc * (cp * st * cf + sp * sf);
        f[4] = acc * (sp * st * cf - cp * sf);
        f[5] = acc * ct * cf - p.gravity;
        f[6] = wx + sf * tt * wy + cf * tt * wz;
        f[7] = cf * wy - sf * wz;
        f[8] = (sf * wy + cf * wz) / ct;
        f[9] = (u[1] - (j3 - j2) * wy * wz) / j1;
        f[10] = (u[2] - (j1 - j3) * wz * wx) / j2;
        f[11] = (u[3] - (j2 - j1) * wx * wy) / j3;
        f
    }

    fn control_matrix(&self, x: &DVector<T>) -> DMatrix<T> {
        let p = &self.params;
        let (sf, cf) = x[6].sin_cos();
        let (st, ct) = x[7].sin_cos();
        let (sp, cp) = x[8].sin_cos();
        let dt = self.dt;
        let mut b = DMatrix::zeros(12, 4);
        b[(3, 0)] = dt * (cp * st * cf + sp * sf) / p.mass;
        b[(4, 0)] = dt * (sp * st * cf - cp * sf) / p.mass;
        b[(5, 0)] = dt * ct * cf / p.mass;
        for i in 0..3 {
            b[(9 + i, 1 + i)] = dt / p.inertia[i];
        }
        b
    }
}

impl<T: Real> DynamicsModel<T> for Quadrotor<T> {
    fn state_dim(&self) -> usize {
        12
    }
    fn control_dim(&self) -> usize {
        4
    }
    fn noise_dim(&self) -> usize {
        self.diffusion.cols(4)
    }
    fn dt(&self) -> T {
        self.dt
    }
    fn step(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        x + self.field(x, u) * self.dt
    }
    fn diffusion(&self, x: &DVector<T>) -> DMatrix<T> {
        self.diffusion.eval(|| self.control_matrix(x))
    }
    fn jacobians(&self, x: &DVector<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let p = &self.params;
        let (sf, cf) = x[6].sin_cos();
        let (st, ct) = x[7].sin_cos();
        let (sp, cp) = x[8].sin_cos();
        let tt = st / ct;
        let (wx, wy, wz) = (x[9], x[10], x[11]);
        let [j1, j2, j3] = p.inertia;
        let acc = p.gravity + u[0] / p.mass;

        let mut fx = DMatrix::<T>::zeros(12, 12);
        for i in 0..3 {
            fx[(i, 3 + i)] = T::one();
        }
        // thrust direction R(η) e3
        fx[(3, 6)] = acc * (-cp * st * sf + sp * cf);
        fx[(3, 7)] = acc * cp * ct * cf;
        fx[(3, 8)] = acc * (-sp * st * cf + cp * sf);
        fx[(4, 6)] = acc * (-sp * st * sf - cp * cf);
        fx[(4, 7)] = acc * sp * ct * cf;
        fx[(4, 8)] = acc * (cp * st * cf + sp * sf);
        fx[(5, 6)] = -acc * ct * sf;
        fx[(5, 7)] = -acc * st * cf;
        // Euler-angle kinematics η̇ = W(φ, θ) ω
        let sec2 = T::one() / (ct * ct);
        fx[(6, 6)] = cf * tt * wy - sf * tt * wz;
        fx[(6, 7)] = (sf * wy + cf * wz) * sec2;
        fx[(7, 6)] = -sf * wy - cf * wz;
        fx[(8, 6)] = (cf * wy - sf * wz) / ct;
        fx[(8, 7)] = (sf * wy + cf * wz) * st * sec2;
        fx[(6, 9)] = T::one();
        fx[(6, 10)] = sf * tt;
        fx[(6, 11)] = cf * tt;
        fx[(7, 10)] = cf;
        fx[(7, 11)] = -sf;
        fx[(8, 10)] = sf / ct;
        fx[(8, 11)] = cf / ct;
        // Euler's rotation equations
        fx[(9, 10)] = -(j3 - j2) * wz / j1;
        fx[(9, 11)] = -(j3 - j2) * wy / j1;
        fx[(10, 9)] = -(j1 - j3) * wz / j2;
        fx[(10, 11)] = -(j1 - j3) * wx / j2;
        fx[(11, 9)] = -(j2 - j1) * wy / j3;
        fx[(11, 10)] = -(j2 - j1) * wx / j3;

        let a = DMatrix::identity(12, 12) + fx * self.dt;
        (a, self.control_matrix(x))
    }
    fn name(&self) -> &str {
        "quadrotor"
    }
}

/// Central finite differences. Used as the default Jacobian hook and as an
/// independent oracle in tests.
pub mod fd {
    use super::DynamicsModel;
    use covsteer_conic::Real;
    use nalgebra::{DMatrix, DVector};

    pub fn jacobian<T: Real>(f: impl Fn(&DVector<T>) -> DVector<T>, x: &DVector<T>, h: T) -> DMatrix<T> {
        let two_h = h + h;
        let mut cols = Vec::with_capacity(x.len());
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            cols.push((f(&xp) - f(&xm)) / two_h);
        }
        DMatrix::from_columns(&cols)
    }

    pub fn jacobians<T: Real, M: DynamicsModel<T> + ?Sized>(
        model: &M,
        x: &DVector<T>,
        u: &DVector<T>,
        h: T,
    ) -> (DMatrix<T>, DMatrix<T>) {
        let a = jacobian(|xx| model.step(xx, u), x, h);
        let b = jacobian(|uu| model.step(x, uu), u, h);
        (a, b)
    }

    pub fn gradient<T: Real>(f: impl Fn(&DVector<T>) -> T, x: &DVector<T>, h: T) -> DVector<T> {
        let two_h = h + h;
        DVector::from_fn(x.len(), |j, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / two_h
        })
    }

    pub fn hessian<T: Real>(f: impl Fn(&DVector<T>) -> T, x: &DVector<T>, h: T) -> DMatrix<T> {
        let n = x.len();
        let four_h2 = T::lit(4.0) * h * h;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let eval = |si: T, sj: T| {
                    let mut y = x.clone();
                    y[i] += si * h;
                    y[j] += sj * h;
                    f(&y)
                };
                let one = T::one();
                let v = (eval(one, one) - eval(one, -one) - eval(-one, one) + eval(-one, -one)) / four_h2;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

/// First-order expansion `x' ≈ A x + B u + d` with noise channel `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub d: DVector<T>,
    pub noise: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> GaussianState<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Self {
        Self { mean, cov }
    }

    /// Symmetry to 1e-10 and PSD to −1e-9.
    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(Error::Dimension(format!("covariance must be {n}x{n}")));
        }
        if (&self.cov - self.cov.transpose()).norm() > T::lit(1e-10) {
            return Err(Error::Dimension("covariance not symmetric".into()));
        }
        if min_eigenvalue(&self.cov) < T::lit(-1e-9) {
            return Err(Error::PsdViolation(min_eigenvalue(&self.cov).as_f64()));
        }
        Ok(())
    }
}

/// `u_t = v_t + K_t (x_t − ref_mean_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw<T: Real> {
    pub v: Vec<DVector<T>>,
    pub k: Vec<DMatrix<T>>,
    pub ref_mean: Vec<DVector<T>>,
}

impl<T: Real> ControlLaw<T> {
    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    pub fn control(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        &self.v[t] + &self.k[t] * (x - &self.ref_mean[t])
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let tf = self.v.len();
        if self.k.len() != tf || self.ref_mean.len() != tf {
            return Err(Error::Dimension("control law sequences differ in length".into()));
        }
        let ok = self.v.iter().all(|v| v.len() == m)
            && self.k.iter().all(|k| k.nrows() == m && k.ncols() == n)
            && self.ref_mean.iter().all(|r| r.len() == n);
        if !ok {
            return Err(Error::Dimension(format!("control law does not match n = {n}, m = {m}")));
        }
        Ok(())
    }
}

/// Linearization point `τ = (x̄, ū, Σ̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory<T: Real> {
    pub x: Vec<DVector<T>>,
    pub u: Vec<DVector<T>>,
    pub sigma: Vec<DMatrix<T>>,
}

impl<T: Real> NominalTrajectory<T> {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// `max_t ‖x̄_{t+1} − f(x̄_t, ū_t)‖∞`.
    pub fn defect<M: DynamicsModel<T> + ?Sized>(&self, model: &M) -> T {
        (0..self.horizon()).fold(T::zero(), |acc, t| {
            let e = &self.x[t + 1] - model.step(&self.x[t], &self.u[t]);
            acc.max(e.amax())
        })
    }
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub(crate) fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    symmetrize(m).symmetric_eigen().eigenvalues.min()
}

/// Symmetric square root through the eigendecomposition (negative
/// eigenvalues clamped), usable on singular covariances.
pub(crate) fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = symmetrize(m).symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

fn finite_matrix<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Taylor expansion of one step at `(x̄, ū)`; `t` names the step in errors.
pub fn linearize_dynamics<T: Real, M: DynamicsModel<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    u: &DVector<T>,
    t: usize,
) -> Result<LinearizedDynamics<T>> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(Error::Dimension(format!(
            "expansion point has dims ({}, {}), model expects ({}, {})",
            x.len(),
            u.len(),
            model.state_dim(),
            model.control_dim()
        )));
    }
    let (a, b) = model.jacobians(x, u);
    let noise = model.diffusion(x);
    if !finite_matrix(&a) || !finite_matrix(&b) || !finite_matrix(&noise) {
        return Err(Error::DegenerateLinearization { t });
    }
    let d = model.step(x, u) - &a * x - &b * u;
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateLinearization { t });
    }
    Ok(LinearizedDynamics { a, b, d, noise })
}

/// Expansions along a nominal trajectory, one per step.
pub fn linearize_trajectory<T: Real, M: DynamicsModel<T> + ?Sized>(
    model: &M,
    nominal: &NominalTrajectory<T>,
) -> Result<Vec<LinearizedDynamics<T>>> {
    (0..nominal.horizon())
        .into_par_iter()
        .map(|t| linearize_dynamics(model, &nominal.x[t], &nominal.u[t], t))
        .collect()
}

pub fn propagate_mean<T: Real>(lin: &LinearizedDynamics<T>, mu: &DVector<T>, v: &DVector<T>) -> DVector<T> {
    &lin.a * mu + &lin.b * v + &lin.d
}

pub fn propagate_cov<T: Real>(lin: &LinearizedDynamics<T>, sigma: &DMatrix<T>, k: &DMatrix<T>) -> DMatrix<T> {
    let m = &lin.a + &lin.b * k;
    let out = &m * sigma * m.transpose() + &lin.noise * lin.noise.transpose();
    symmetrize(&out)
}

/// Whether the rollout applies the feedback correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RolloutFeedback {
    #[default]
    Full,
    FeedforwardOnly,
}

/// Noiseless rollout of the control law; `Σ̄` is taken from the covariance
/// block's solution.
pub fn forward_pass<T: Real, M: DynamicsModel<T> + ?Sized>(
    model: &M,
    law: &ControlLaw<T>,
    sigma_s: &[DMatrix<T>],
    x0: &DVector<T>,
    feedback: RolloutFeedback,
) -> Result<NominalTrajectory<T>> {
    let tf = law.horizon();
    if sigma_s.len() != tf + 1 {
        return Err(Error::Dimension(format!(
            "covariance sequence has length {}, expected {}",
            sigma_s.len(),
            tf + 1
        )));
    }
    let mut x = Vec::with_capacity(tf + 1);
    let mut u = Vec::with_capacity(tf);
    x.push(x0.clone());
    for t in 0..tf {
        let ut = match feedback {
            RolloutFeedback::Full => law.control(t, &x[t]),
            RolloutFeedback::FeedforwardOnly => law.v[t].clone(),
        };
        let next = model.step(&x[t], &ut);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        u.push(ut);
        x.push(next);
    }
    Ok(NominalTrajectory {
        x,
        u,
        sigma: sigma_s.to_vec(),
    })
}

fn rollout_sample<T: Real, M: DynamicsModel<T> + ?Sized>(
    model: &M,
    law: &ControlLaw<T>,
    x0_dist: &GaussianState<T>,
    x0_sqrt: &DMatrix<T>,
    seed: u64,
    sample: u64,
    feedback: RolloutFeedback,
) -> Result<(Vec<DVector<T>>, Vec<DVector<T>>)> {
    let tf = law.horizon();
    let n = model.state_dim();
    let mut rng = keyed_rng(seed, sample, 0);
    let mut x = &x0_dist.mean + x0_sqrt * standard_normal::<T>(&mut rng, n);
    let mut xs = Vec::with_capacity(tf + 1);
    let mut us = Vec::with_capacity(tf);
    xs.push(x.clone());
    for t in 0..tf {
        let ut = match feedback {
            RolloutFeedback::Full => law.control(t, &x),
            RolloutFeedback::FeedforwardOnly => law.v[t].clone(),
        };
        let mut rng = keyed_rng(seed, sample, t as u64 + 1);
        let w = standard_normal::<T>(&mut rng, model.noise_dim());
        x = model.step(&x, &ut) + model.diffusion(&x) * w;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t });
        }
        xs.push(x.clone());
        us.push(ut);
    }
    Ok((xs, us))
}

/// Sample moments over `n_samples` noisy rollouts; deterministic in `seed`
/// regardless of the worker count.
pub fn sampled_forward_pass<T: Real, M: DynamicsModel<T> + ?Sized>(
    model: &M,
    law: &ControlLaw<T>,
    x0_dist: &GaussianState<T>,
    n_samples: usize,
    seed: u64,
    feedback: RolloutFeedback,
) -> Result<NominalTrajectory<T>> {
    if n_samples < 2 {
        return Err(Error::Config("sampled forward pass needs at least 2 samples".into()));
    }
    let tf = law.horizon();
    let n = model.state_dim();
    let root = psd_sqrt(&x0_dist.cov);
    let samples: Vec<(Vec<DVector<T>>, Vec<DVector<T>>)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|s| rollout_sample(model, law, x0_dist, &root, seed, s, feedback))
        .collect::<Result<_>>()?;

    // Welford recursion in sample order: exact when all samples coincide
    let mut mean = vec![DVector::zeros(n); tf + 1];
    let mut m2 = vec![DMatrix::zeros(n, n); tf + 1];
    let mut umean = vec![DVector::zeros(model.control_dim()); tf];
    for (k, (xs, us)) in samples.iter().enumerate() {
        let w = T::one() / T::from_usize_lossy(k + 1);
        for t in 0..=tf {
            let delta = &xs[t] - &mean[t];
            mean[t] += &delta * w;
            let delta2 = &xs[t] - &mean[t];
            m2[t] += &delta * delta2.transpose();
        }
        for t in 0..tf {
            let delta = &us[t] - &umean[t];
            umean[t] += delta * w;
        }
    }
    let denom = T::from_usize_lossy(n_samples - 1);
    Ok(NominalTrajectory {
        x: mean,
        u: umean,
        sigma: m2.iter().map(|m| symmetrize(&(m / denom))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_integrator_is_its_own_linearization() {
        let m = DoubleIntegrator::planar(0.2, Diffusion::ControlChannel(1.0));
        let x = DVector::from_vec(vec![1.0, -2.0, 0.3, 0.4]);
        let u = DVector::from_vec(vec![0.5, -0.1]);
        let lin = linearize_dynamics(&m, &x, &u, 0).unwrap();
        assert_eq!(lin.a, m.a());
        assert_eq!(lin.b, m.b());
        assert!(lin.d.amax() <= 1e-12);
        assert_eq!(lin.noise, m.b());
    }

    #[test]
    fn scalar_mean_arithmetic() {
        let lin = LinearizedDynamics {
            a: DMatrix::from_element(1, 1, 2.0),
            b: DMatrix::from_element(1, 1, 1.0),
            d: DVector::from_element(1, 3.0),
            noise: DMatrix::zeros(1, 1),
        };
        let mu = propagate_mean(&lin, &DVector::from_element(1, 1.0), &DVector::from_element(1, 1.0));
        assert_eq!(mu[0], 6.0);
    }

    #[test]
    fn zero_closed_loop_leaves_noise() {
        let lin = LinearizedDynamics {
            a: DMatrix::identity(2, 2),
            b: DMatrix::identity(2, 2),
            d: DVector::zeros(2),
            noise: DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        };
        let k = -DMatrix::identity(2, 2);
        let out = propagate_cov(&lin, &DMatrix::identity(2, 2), &k);
        assert_eq!(out, &lin.noise * lin.noise.transpose());
    }

    #[test]
    fn quadrotor_hovers_at_zero_input() {
        let q = Quadrotor {
            dt: 0.1,
            params: QuadrotorParams::default(),
            diffusion: Diffusion::ControlChannel(0.1),
        };
        let x = DVector::from_fn(12, |i, _| if i < 3 { i as f64 } else { 0.0 });
        assert!((q.step(&x, &DVector::zeros(4)) - &x).amax() <= 1e-15);
    }
}
