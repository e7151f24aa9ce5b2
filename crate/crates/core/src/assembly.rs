//! Sparse assembly of the mean and covariance programs, shared by the
//! proximal blocks and the single-program baseline.

use crate::local::{LocalProblem, TerminalCovMode};
use crate::models::psd_sqrt;
use covsteer_conic::{svec, svec_index, svec_len, Cone, Real};
use nalgebra::DMatrix;

pub(crate) type Triplets<T> = Vec<(usize, usize, T)>;

/// `[μ_0 … μ_tf, v_0 … v_{tf−1}]` starting at `base`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MeanLayout {
    pub n: usize,
    pub m: usize,
    pub tf: usize,
    pub base: usize,
}

impl MeanLayout {
    pub fn mu(&self, t: usize) -> usize {
        self.base + t * self.n
    }
    pub fn v(&self, t: usize) -> usize {
        self.base + (self.tf + 1) * self.n + t * self.m
    }
    pub fn len(&self) -> usize {
        (self.tf + 1) * self.n + self.tf * self.m
    }
    pub fn rows(&self) -> usize {
        (self.tf + 2) * self.n
    }
}

/// Equalities `E z = e`: initial mean, the mean recursion and the terminal
/// mean, appended starting at row `row0`.
pub(crate) fn mean_equalities<T: Real>(
    prob: &LocalProblem<T>,
    lay: &MeanLayout,
    row0: usize,
    trip: &mut Triplets<T>,
    rhs: &mut Vec<T>,
) {
    let (n, m) = (lay.n, lay.m);
    rhs.resize(row0 + lay.rows(), T::zero());
    for i in 0..n {
        trip.push((row0 + i, lay.mu(0) + i, T::one()));
        rhs[row0 + i] = prob.boundary.mu_ic[i];
    }
    for (t, lin) in prob.lin.iter().enumerate() {
        let r = row0 + (t + 1) * n;
        for i in 0..n {
            trip.push((r + i, lay.mu(t + 1) + i, T::one()));
            for k in 0..n {
                let a = lin.a[(i, k)];
                if a != T::zero() {
                    trip.push((r + i, lay.mu(t) + k, -a));
                }
            }
            for k in 0..m {
                let b = lin.b[(i, k)];
                if b != T::zero() {
                    trip.push((r + i, lay.v(t) + k, -b));
                }
            }
            rhs[r + i] = lin.d[i];
        }
    }
    let r = row0 + (lay.tf + 1) * n;
    for i in 0..n {
        trip.push((r + i, lay.mu(lay.tf) + i, T::one()));
        rhs[r + i] = prob.boundary.mu_tc[i];
    }
}

/// Upper triangle of `blockdiag(Q_t + w_μ I, R)` over the mean layout.
pub(crate) fn mean_hessian<T: Real>(prob: &LocalProblem<T>, lay: &MeanLayout, w_mu: T, trip: &mut Triplets<T>) {
    for t in 0..=lay.tf {
        let q = &prob.cost.q[t];
        for j in 0..lay.n {
            for i in 0..=j {
                let mut v = q[(i, j)];
                if i == j {
                    v += w_mu;
                }
                if v != T::zero() || i == j {
                    trip.push((lay.mu(t) + i, lay.mu(t) + j, v));
                }
            }
        }
    }
    for t in 0..lay.tf {
        for j in 0..lay.m {
            for i in 0..=j {
                let v = prob.cost.r[(i, j)];
                if v != T::zero() || i == j {
                    trip.push((lay.v(t) + i, lay.v(t) + j, v));
                }
            }
        }
    }
}

/// `±G u_t ≤ b_max` rows in nonnegative-cone form; `u_t = v_t` in the mean
/// program since the feedback term has zero mean.
pub(crate) fn polytope_rows<T: Real>(
    gmat: &DMatrix<T>,
    b_max: &nalgebra::DVector<T>,
    lay: &MeanLayout,
    row0: usize,
    trip: &mut Triplets<T>,
    rhs: &mut Vec<T>,
) -> usize {
    let r = gmat.nrows();
    let rows = 2 * r * lay.tf;
    rhs.resize(row0 + rows, T::zero());
    for t in 0..lay.tf {
        for (side, sign) in [(0, T::one()), (1, -T::one())] {
            let base = row0 + (2 * t + side) * r;
            for i in 0..r {
                for k in 0..lay.m {
                    let g = gmat[(i, k)];
                    if g != T::zero() {
                        trip.push((base + i, lay.v(t) + k, sign * g));
                    }
                }
                rhs[base + i] = b_max[i];
            }
        }
    }
    rows
}

/// `[svec Σ_1 … svec Σ_tf, U_0 … U_{tf−1}, svec Y_0 … svec Y_{tf−1}]`
/// starting at `base`; `U_t` is stored column-major.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CovLayout {
    pub n: usize,
    pub m: usize,
    pub tf: usize,
    pub base: usize,
}

impl CovLayout {
    pub fn ns(&self) -> usize {
        svec_len(self.n)
    }
    pub fn sigma(&self, t: usize) -> Option<usize> {
        (t >= 1).then(|| self.base + (t - 1) * self.ns())
    }
    pub fn u(&self, t: usize) -> usize {
        self.base + self.tf * self.ns() + t * self.m * self.n
    }
    pub fn y(&self, t: usize) -> usize {
        self.base + self.tf * (self.ns() + self.m * self.n) + t * svec_len(self.m)
    }
    pub fn len(&self) -> usize {
        self.tf * (self.ns() + self.m * self.n + svec_len(self.m))
    }
}

/// Writes rows of one PSD block so that `s = b − A x = svec(M(x))`.
struct BlockWriter<'a, T> {
    row0: usize,
    trip: &'a mut Triplets<T>,
    rhs: &'a mut Vec<T>,
}

impl<T: Real> BlockWriter<'_, T> {
    fn scale(i: usize, j: usize) -> T {
        if i == j {
            T::one()
        } else {
            T::lit(std::f64::consts::SQRT_2)
        }
    }

    /// `M_ij += coef · x_var` for an upper entry `i ≤ j`.
    fn var(&mut self, i: usize, j: usize, var: usize, coef: T) {
        if coef != T::zero() {
            let row = self.row0 + svec_index(i, j);
            self.trip.push((row, var, -Self::scale(i, j) * coef));
        }
    }

    fn constant(&mut self, i: usize, j: usize, val: T) {
        let row = self.row0 + svec_index(i, j);
        self.rhs[row] += Self::scale(i, j) * val;
    }

    /// `M_ij += coef · S(k, l)` where `S` is a symmetric matrix variable
    /// stored as `svec` at `off`, or the constant `fixed`.
    fn sym(&mut self, i: usize, j: usize, src: SymSource<'_, T>, k: usize, l: usize, coef: T) {
        match src {
            SymSource::Var(off) => {
                let unscale = if k == l {
                    T::one()
                } else {
                    T::lit(std::f64::consts::FRAC_1_SQRT_2)
                };
                self.var(i, j, off + svec_index(k, l), coef * unscale);
            }
            SymSource::Const(m) => self.constant(i, j, coef * m[(k, l)]),
        }
    }
}

#[derive(Clone, Copy)]
enum SymSource<'a, T> {
    Var(usize),
    Const(&'a DMatrix<T>),
}

/// Dynamics LMIs `[[Σ_{t+1} − DDᵀ, AΣ_t + BU_t], [·, Σ_t]] ⪰ 0`, epigraph
/// LMIs `[[Y_t, √R U_t], [·, Σ_t]] ⪰ 0` and the terminal condition.
pub(crate) fn cov_constraints<T: Real>(
    prob: &LocalProblem<T>,
    lay: &CovLayout,
    row0: usize,
    trip: &mut Triplets<T>,
    rhs: &mut Vec<T>,
    cones: &mut Vec<Cone>,
) -> usize {
    let (n, m, tf) = (lay.n, lay.m, lay.tf);
    let sqrt_r = psd_sqrt(&prob.cost.r);
    let sigma0 = &prob.boundary.sigma_ic;
    let src = |t: usize| match lay.sigma(t) {
        Some(off) => SymSource::Var(off),
        None => SymSource::Const(sigma0),
    };
    let mut row = row0;
    for (t, lin) in prob.lin.iter().enumerate() {
        let dyn_rows = svec_len(2 * n);
        rhs.resize(row + dyn_rows, T::zero());
        let ddt = &lin.noise * lin.noise.transpose();
        let mut w = BlockWriter { row0: row, trip, rhs };
        for j in 0..n {
            for i in 0..=j {
                w.sym(i, j, src(t + 1), i, j, T::one());
                w.constant(i, j, -ddt[(i, j)]);
                w.sym(n + i, n + j, src(t), i, j, T::one());
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let a = lin.a[(i, k)];
                    if a != T::zero() {
                        w.sym(i, n + j, src(t), k, j, a);
                    }
                }
                for l in 0..m {
                    w.var(i, n + j, lay.u(t) + l + j * m, lin.b[(i, l)]);
                }
            }
        }
        cones.push(Cone::Psd(2 * n));
        row += dyn_rows;

        let epi_rows = svec_len(m + n);
        rhs.resize(row + epi_rows, T::zero());
        let mut w = BlockWriter { row0: row, trip, rhs };
        for j in 0..m {
            for i in 0..=j {
                w.sym(i, j, SymSource::Var(lay.y(t)), i, j, T::one());
            }
        }
        for i in 0..m {
            for j in 0..n {
                for l in 0..m {
                    w.var(i, m + j, lay.u(t) + l + j * m, sqrt_r[(i, l)]);
                }
            }
        }
        for j in 0..n {
            for i in 0..=j {
                w.sym(m + i, m + j, src(t), i, j, T::one());
            }
        }
        cones.push(Cone::Psd(m + n));
        row += epi_rows;
    }

    let ns = lay.ns();
    let target = svec(&prob.boundary.sigma_tc);
    rhs.resize(row + ns, T::zero());
    let off = lay.sigma(tf).expect("horizon ≥ 1");
    for r in 0..ns {
        trip.push((row + r, off + r, T::one()));
        rhs[row + r] = target[r];
    }
    cones.push(match prob.terminal_mode {
        TerminalCovMode::Equality => Cone::Zero(ns),
        TerminalCovMode::Inequality => Cone::Psd(n),
    });
    row + ns - row0
}

/// Linear objective of the covariance variables: `svec(Q_t) − w·svec(T_t)`
/// on `Σ_t` and `trace(Y_t)` on the epigraph variables.
pub(crate) fn cov_linear_objective<T: Real>(
    prob: &LocalProblem<T>,
    lay: &CovLayout,
    weight: T,
    target: &[DMatrix<T>],
    c: &mut [T],
) {
    let ns = lay.ns();
    for t in 1..=lay.tf {
        let off = lay.sigma(t).expect("t ≥ 1");
        let q = svec(&prob.cost.q[t]);
        let tg = svec(&target[t]);
        for r in 0..ns {
            c[off + r] = q[r] - weight * tg[r];
        }
    }
    for t in 0..lay.tf {
        for i in 0..lay.m {
            c[lay.y(t) + svec_index(i, i)] = T::one();
        }
    }
}

/// `w·I` on the `Σ` variables, upper triangle.
pub(crate) fn cov_hessian<T: Real>(lay: &CovLayout, weight: T, trip: &mut Triplets<T>) {
    if weight == T::zero() {
        return;
    }
    for t in 1..=lay.tf {
        let off = lay.sigma(t).expect("t ≥ 1");
        for r in 0..lay.ns() {
            trip.push((off + r, off + r, weight));
        }
    }
}
