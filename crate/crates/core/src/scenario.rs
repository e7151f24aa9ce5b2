//! Problem definition shared by the solver, the baseline and the evaluator.

use crate::blocks::ControlPolytope;
use crate::chance::{Obstacle, RiskBudget};
use crate::error::{Error, Result};
use crate::local::{StateCost, TerminalCovMode};
use crate::models::{min_eigenvalue, DynamicsModel};
use covsteer_conic::Real;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Initial and target distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary<T: Real> {
    pub mu_ic: DVector<T>,
    pub sigma_ic: DMatrix<T>,
    pub mu_tc: DVector<T>,
    pub sigma_tc: DMatrix<T>,
}

/// Rejection bounds for the initial-state draw: each listed coordinate must
/// stay within `bound` standard deviations of its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation<T> {
    pub coords: Vec<usize>,
    pub bound: T,
}

#[derive(Debug, Clone)]
pub struct Scenario<T: Real> {
    pub model: Arc<dyn DynamicsModel<T>>,
    pub horizon: usize,
    pub boundary: Boundary<T>,
    pub terminal_mode: TerminalCovMode,
    pub obstacles: Vec<Obstacle<T>>,
    pub budget: RiskBudget<T>,
    pub state_cost: Arc<dyn StateCost<T>>,
    pub r: DMatrix<T>,
    pub polytope: Option<ControlPolytope<T>>,
    pub truncation: Option<Truncation<T>>,
}

impl<T: Real> Scenario<T> {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.control_dim());
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let b = &self.boundary;
        let square = |s: &DMatrix<T>| s.nrows() == n && s.ncols() == n;
        if b.mu_ic.len() != n || b.mu_tc.len() != n || !square(&b.sigma_ic) || !square(&b.sigma_tc) {
            return Err(Error::Dimension(format!("boundary distributions must live in R^{n}")));
        }
        for (name, s) in [("initial", &b.sigma_ic), ("target", &b.sigma_tc)] {
            if min_eigenvalue(s) <= T::zero() {
                return Err(Error::Config(format!("{name} covariance must be positive definite")));
            }
        }
        if self.r.nrows() != m || self.r.ncols() != m || min_eigenvalue(&self.r) <= T::zero() {
            return Err(Error::Config(format!("R must be a positive definite {m}x{m} matrix")));
        }
        for obs in &self.obstacles {
            obs.validate(n)?;
        }
        if self.budget.n_constraints != self.obstacles.len() {
            return Err(Error::Config("risk budget does not match the obstacle count".into()));
        }
        if let Some(p) = &self.polytope {
            p.validate(m)?;
        }
        if let Some(tr) = &self.truncation {
            if tr.coords.iter().any(|&c| c >= n) || tr.bound <= T::zero() {
                return Err(Error::Config(
                    "truncation bounds must be positive on valid coordinates".into(),
                ));
            }
        }
        Ok(())
    }
}
