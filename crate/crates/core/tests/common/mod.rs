#![allow(dead_code)]

use covsteer::local::{LocalProblem, ProxWeights, QuadraticCost, TerminalCovMode};
use covsteer::models::{LinearizedDynamics, NominalTrajectory};
use covsteer::scenario::Boundary;
use nalgebra::{DMatrix, DVector};

/// Time-invariant linear problem with no chance constraints and an anchor
/// obtained by zero-input propagation.
pub fn linear_problem(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    noise: DMatrix<f64>,
    tf: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    boundary: Boundary<f64>,
    mode: TerminalCovMode,
) -> LocalProblem<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let lin = LinearizedDynamics {
        a: a.clone(),
        b,
        d: DVector::zeros(n),
        noise,
    };
    let mut x = vec![boundary.mu_ic.clone()];
    let mut sigma = vec![boundary.sigma_ic.clone()];
    for t in 0..tf {
        x.push(&a * &x[t]);
        sigma.push(&a * &sigma[t] * a.transpose() + &lin.noise * lin.noise.transpose());
    }
    LocalProblem {
        lin: vec![lin; tf],
        cost: QuadraticCost {
            q: vec![q; tf + 1],
            lin: vec![DVector::zeros(n); tf + 1],
            c0: vec![0.0; tf + 1],
            r,
        },
        constraints: vec![],
        boundary,
        terminal_mode: mode,
        prox: ProxWeights::default(),
        polytope: None,
        anchor: NominalTrajectory {
            x,
            u: vec![DVector::zeros(m); tf],
            sigma,
        },
    }
}

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn vec1(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Planar double integrator with step `dt`.
pub fn di_matrices(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::identity(4, 4);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    let mut b = DMatrix::zeros(4, 2);
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    (a, b)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Double-integrator scenario in `dim` spatial dimensions with constant
/// diffusion `noise·I` on the velocities and quadratic state cost `q·I`.
pub fn di_scenario(
    dim: usize,
    dt: f64,
    noise: f64,
    tf: usize,
    boundary: covsteer::Boundary,
    obstacles: Vec<covsteer::Obstacle>,
    delta_prime: f64,
) -> covsteer::Scenario {
    use covsteer::local::QuadraticStateCost;
    use covsteer::models::{Diffusion, DoubleIntegrator};
    use std::sync::Arc;
    let n = 2 * dim;
    let mut d = DMatrix::zeros(n, dim);
    for i in 0..dim {
        d[(dim + i, i)] = noise;
    }
    covsteer::Scenario {
        model: Arc::new(DoubleIntegrator {
            dim,
            dt,
            diffusion: Diffusion::Constant(d),
        }),
        horizon: tf,
        budget: covsteer::RiskBudget::per_constraint(delta_prime, obstacles.len()).unwrap(),
        obstacles,
        state_cost: Arc::new(QuadraticStateCost {
            q: DMatrix::identity(n, n) * 0.01,
            goal: boundary.mu_tc.clone(),
        }),
        boundary,
        terminal_mode: TerminalCovMode::Inequality,
        r: DMatrix::identity(dim, dim) * 0.005,
        polytope: None,
        truncation: None,
    }
}

/// Boundary with isotropic covariances.
pub fn iso_boundary(mu_ic: &[f64], s_ic: f64, mu_tc: &[f64], s_tc: f64) -> covsteer::Boundary {
    let n = mu_ic.len();
    covsteer::Boundary {
        mu_ic: DVector::from_column_slice(mu_ic),
        sigma_ic: DMatrix::identity(n, n) * s_ic,
        mu_tc: DVector::from_column_slice(mu_tc),
        sigma_tc: DMatrix::identity(n, n) * s_tc,
    }
}
