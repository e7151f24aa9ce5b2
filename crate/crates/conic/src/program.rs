use crate::{Cone, CscMatrix, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] crate::LdlError),
    #[error("problem data contains non-finite values")]
    NonFinite,
}

/// `minimize ½ xᵀ P x + cᵀ x  subject to  A x + s = b,  s ∈ K`.
///
/// `P` is optional and, when present, stores the upper triangle of a PSD
/// matrix. PSD blocks of `K` use the scaled `svec` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram<T> {
    pub p: Option<CscMatrix<T>>,
    pub c: Vec<T>,
    pub a: CscMatrix<T>,
    pub b: Vec<T>,
    pub cones: Vec<Cone>,
}

impl<T: Real> ConeProgram<T> {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let (n, m) = (self.n(), self.m());
        if self.a.ncols != n || self.a.nrows != m {
            return Err(ConicError::Dimension(format!(
                "A is {}x{}, expected {m}x{n}",
                self.a.nrows, self.a.ncols
            )));
        }
        let cone_dim: usize = self.cones.iter().map(Cone::dim).sum();
        if cone_dim != m {
            return Err(ConicError::Dimension(format!("cones cover {cone_dim} rows, A has {m}")));
        }
        if let Some(p) = &self.p {
            if p.nrows != n || p.ncols != n {
                return Err(ConicError::Dimension(format!(
                    "P is {}x{}, expected {n}x{n}",
                    p.nrows, p.ncols
                )));
            }
            for j in 0..n {
                if p.col(j).any(|(i, _)| i > j) {
                    return Err(ConicError::Dimension("P must hold its upper triangle only".into()));
                }
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(ConicError::NonFinite);
            }
        }
        let finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) || !finite(&self.b) || !finite(&self.a.values) {
            return Err(ConicError::NonFinite);
        }
        Ok(())
    }

    /// Objective value at `x`.
    pub fn objective(&self, x: &[T]) -> T {
        let mut val = self.c.iter().zip(x).fold(T::zero(), |acc, (&c, &x)| acc + c * x);
        if let Some(p) = &self.p {
            let mut px = vec![T::zero(); x.len()];
            p.symv_upper(T::one(), x, &mut px);
            val += T::lit(0.5) * px.iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        }
        val
    }

    /// Row offsets of each cone block.
    pub fn cone_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cones.len() + 1);
        let mut acc = 0;
        out.push(0);
        for c in &self.cones {
            acc += c.dim();
            out.push(acc);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Primal infeasible, certified by a dual ray.
    Infeasible,
    /// Dual infeasible, certified by a primal ray.
    Unbounded,
    MaxIters,
}

/// Normalized residuals: each norm is divided by `1 + scale` of the terms it
/// balances, so they compare directly against the solver tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals<T> {
    pub primal: T,
    pub dual: T,
    pub gap: T,
}

#[derive(Debug, Clone)]
pub struct ConeSolution<T> {
    pub x: Vec<T>,
    pub s: Vec<T>,
    /// Dual multipliers in the dual cone `K*`.
    pub y: Vec<T>,
    pub status: SolveStatus,
    pub residuals: Residuals<T>,
    pub objective: T,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings<T> {
    pub tol: T,
    pub max_iters: usize,
    /// Initial step size for the slack/dual update.
    pub rho: T,
    /// Proximal term on `x`; keeps the KKT matrix quasi-definite.
    pub sigma: T,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: T,
    pub check_every: usize,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    pub infeasibility_tol: T,
}

impl<T: Real> Default for Settings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-7),
            max_iters: 50_000,
            rho: T::lit(0.1),
            sigma: T::lit(1e-6).max(T::default_epsilon() * T::lit(1e3)),
            alpha: T::lit(1.6),
            check_every: 25,
            adaptive_rho: true,
            scaling_iters: 10,
            infeasibility_tol: T::lit(1e-6),
        }
    }
}
