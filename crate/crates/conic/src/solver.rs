//! Operator-splitting conic solver.
//!
//! Each iteration solves one quasi-definite KKT system (factorized once, and
//! again only when the step size is adapted) and projects the slack onto the
//! cone product. Primal and dual infeasibility are detected from the limits
//! of successive iterate differences, which converge to certificates.

use crate::cones::{project_block, project_dual_block};
use crate::{
    Cone, ConeProgram, ConeSolution, ConicError, CscMatrix, LdlFactor, Real, Residuals, Settings, SolveStatus,
};
use rayon::prelude::*;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
/// Total PSD work (sum of k³) above which block projections fan out.
const PAR_PSD_WORK: usize = 20_000;

/// Reusable solver workspace. The KKT factorization and the iterates survive
/// across calls to [`ConeSolver::solve`], so a sequence of programs that only
/// differ in their linear objective can be solved with warm starts.
#[derive(Debug, Clone)]
pub struct ConeSolver<T> {
    prog: ConeProgram<T>,
    settings: Settings<T>,
    offsets: Vec<usize>,
    // equilibration: x = D x̂, s = ŝ / E, y = E ŷ / γ
    d: Vec<T>,
    e: Vec<T>,
    gamma: T,
    p_s: Option<CscMatrix<T>>,
    c_s: Vec<T>,
    a_s: CscMatrix<T>,
    b_s: Vec<T>,
    kkt: CscMatrix<T>,
    kkt_bottom_diag: Vec<usize>,
    factor: LdlFactor<T>,
    rho: T,
    rho_vec: Vec<T>,
    x: Vec<T>,
    s: Vec<T>,
    y: Vec<T>,
    par_projection: bool,
}

fn norm_inf<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn find_entry<T: Real>(m: &CscMatrix<T>, i: usize, j: usize) -> usize {
    let range = m.colptr[j]..m.colptr[j + 1];
    let pos = m.rowind[range.clone()]
        .binary_search(&i)
        .expect("structural entry present");
    range.start + pos
}

fn clamp_scale<T: Real>(v: T) -> T {
    if v <= T::zero() || !v.is_finite() {
        T::one()
    } else {
        v.max(T::lit(SCALE_MIN)).min(T::lit(SCALE_MAX))
    }
}

impl<T: Real> ConeSolver<T> {
    pub fn new(prog: ConeProgram<T>, settings: Settings<T>) -> Result<Self, ConicError> {
        prog.validate()?;
        let (n, m) = (prog.n(), prog.m());
        let offsets = prog.cone_offsets();

        let mut p_s = prog.p.clone();
        let mut a_s = prog.a.clone();
        let mut c_s = prog.c.clone();
        let mut b_s = prog.b.clone();
        let mut d = vec![T::one(); n];
        let mut e = vec![T::one(); m];
        let mut gamma = T::one();

        for _ in 0..settings.scaling_iters {
            let a_col = a_s.col_norms_inf();
            let p_col = match &p_s {
                Some(p) => sym_col_norms_inf(p),
                None => vec![T::zero(); n],
            };
            let delta: Vec<T> = (0..n)
                .map(|j| clamp_scale(T::one() / a_col[j].max(p_col[j]).sqrt()))
                .collect();
            let mut eps: Vec<T> = a_s
                .row_norms_inf()
                .into_iter()
                .map(|r| clamp_scale(T::one() / r.sqrt()))
                .collect();
            for (k, cone) in prog.cones.iter().enumerate() {
                if cone.needs_uniform_scaling() {
                    let blk = &mut eps[offsets[k]..offsets[k + 1]];
                    let mean = blk.iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(blk.len());
                    blk.iter_mut().for_each(|v| *v = mean);
                }
            }
            a_s.scale(&eps, &delta);
            if let Some(p) = p_s.as_mut() {
                p.scale(&delta, &delta);
            }
            for j in 0..n {
                c_s[j] *= delta[j];
                d[j] *= delta[j];
            }
            for i in 0..m {
                b_s[i] *= eps[i];
                e[i] *= eps[i];
            }
            // cost scaling
            let p_mean = match &p_s {
                Some(p) if n > 0 => {
                    let cn = sym_col_norms_inf(p);
                    cn.iter().fold(T::zero(), |a, &v| a + v) / T::from_usize_lossy(n)
                }
                _ => T::zero(),
            };
            let g = clamp_scale(T::one() / p_mean.max(norm_inf(&c_s)));
            if let Some(p) = p_s.as_mut() {
                p.values.iter_mut().for_each(|v| *v *= g);
            }
            c_s.iter_mut().for_each(|v| *v *= g);
            gamma *= g;
        }

        // upper triangle of [[P + σI, Aᵀ], [A, -diag(1/ρ)]]
        let mut trip: Vec<(usize, usize, T)> =
            Vec::with_capacity(n + m + a_s.nnz() + p_s.as_ref().map_or(0, |p| p.nnz()));
        if let Some(p) = &p_s {
            trip.extend(p.triplets());
        }
        for j in 0..n {
            trip.push((j, j, settings.sigma));
        }
        for (i, j, v) in a_s.triplets() {
            trip.push((j, n + i, v));
        }
        let mut rho_vec = vec![settings.rho; m];
        for (k, cone) in prog.cones.iter().enumerate() {
            if matches!(cone, Cone::Zero(_)) {
                for r in offsets[k]..offsets[k + 1] {
                    rho_vec[r] = settings.rho * T::lit(EQ_RHO_FACTOR);
                }
            }
        }
        for i in 0..m {
            trip.push((n + i, n + i, -T::one() / rho_vec[i]));
        }
        let kkt = CscMatrix::from_triplets(n + m, n + m, &trip);
        let kkt_bottom_diag: Vec<usize> = (0..m).map(|i| find_entry(&kkt, n + i, n + i)).collect();
        let factor = LdlFactor::new(&kkt)?;

        let psd_work: usize = prog
            .cones
            .iter()
            .map(|c| match c {
                Cone::Psd(k) => k * k * k,
                _ => 0,
            })
            .sum();

        Ok(Self {
            settings,
            offsets,
            d,
            e,
            gamma,
            p_s,
            c_s,
            a_s,
            b_s,
            kkt,
            kkt_bottom_diag,
            factor,
            rho: settings.rho,
            rho_vec,
            x: vec![T::zero(); n],
            s: vec![T::zero(); m],
            y: vec![T::zero(); m],
            par_projection: psd_work > PAR_PSD_WORK,
            prog,
        })
    }

    pub fn program(&self) -> &ConeProgram<T> {
        &self.prog
    }

    pub fn settings_mut(&mut self) -> &mut Settings<T> {
        &mut self.settings
    }

    /// Replaces the linear objective; scaling and factorization are kept.
    pub fn set_linear_objective(&mut self, c: &[T]) {
        assert_eq!(c.len(), self.prog.n());
        self.prog.c.copy_from_slice(c);
        for j in 0..c.len() {
            self.c_s[j] = self.gamma * self.d[j] * c[j];
        }
    }

    /// Replaces the constraint right-hand side; scaling and factorization are kept.
    pub fn set_rhs(&mut self, b: &[T]) {
        assert_eq!(b.len(), self.prog.m());
        self.prog.b.copy_from_slice(b);
        for i in 0..b.len() {
            self.b_s[i] = self.e[i] * b[i];
        }
    }

    /// Sets the starting point from an unscaled primal guess and dual guess
    /// (dual in `K*`).
    pub fn warm_start(&mut self, x: Option<&[T]>, y: Option<&[T]>) {
        if let Some(x) = x {
            for j in 0..x.len() {
                self.x[j] = x[j] / self.d[j];
            }
            let mut ax = vec![T::zero(); self.prog.m()];
            self.a_s.gemv(T::one(), &self.x, &mut ax);
            for i in 0..ax.len() {
                self.s[i] = self.b_s[i] - ax[i];
            }
            let s = std::mem::take(&mut self.s);
            self.s = self.projected(s, false);
        }
        if let Some(y) = y {
            for i in 0..y.len() {
                self.y[i] = -self.gamma * y[i] / self.e[i];
            }
        }
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = T::zero());
        self.s.iter_mut().for_each(|v| *v = T::zero());
        self.y.iter_mut().for_each(|v| *v = T::zero());
    }

    fn projected(&self, mut v: Vec<T>, dual: bool) -> Vec<T> {
        let project = |cone: &Cone, blk: &mut [T]| {
            if dual {
                project_dual_block(cone, blk)
            } else {
                project_block(cone, blk)
            }
        };
        if self.par_projection {
            let mut blocks: Vec<(&Cone, &mut [T])> = Vec::with_capacity(self.prog.cones.len());
            let mut rest: &mut [T] = &mut v;
            for cone in &self.prog.cones {
                let (head, tail) = rest.split_at_mut(cone.dim());
                blocks.push((cone, head));
                rest = tail;
            }
            blocks.par_iter_mut().for_each(|(cone, blk)| project(cone, blk));
        } else {
            for (k, cone) in self.prog.cones.iter().enumerate() {
                project(cone, &mut v[self.offsets[k]..self.offsets[k + 1]]);
            }
        }
        v
    }

    fn update_rho(&mut self, rho: T) -> Result<(), ConicError> {
        self.rho = rho;
        for (k, cone) in self.prog.cones.iter().enumerate() {
            let r = if matches!(cone, Cone::Zero(_)) {
                rho * T::lit(EQ_RHO_FACTOR)
            } else {
                rho
            };
            for i in self.offsets[k]..self.offsets[k + 1] {
                self.rho_vec[i] = r;
            }
        }
        for (i, &pos) in self.kkt_bottom_diag.iter().enumerate() {
            self.kkt.values[pos] = -T::one() / self.rho_vec[i];
        }
        self.factor.refactor(&self.kkt.values)?;
        Ok(())
    }

    fn unscaled(&self) -> (Vec<T>, Vec<T>, Vec<T>) {
        let x: Vec<T> = self.x.iter().zip(&self.d).map(|(&v, &d)| v * d).collect();
        let s: Vec<T> = self.s.iter().zip(&self.e).map(|(&v, &e)| v / e).collect();
        // internal multiplier lives in the polar cone; report the dual-cone sign
        let y: Vec<T> = self.y.iter().zip(&self.e).map(|(&v, &e)| -v * e / self.gamma).collect();
        (x, s, y)
    }

    /// Residuals of an unscaled triple `(x, s, y)` with `y ∈ K*`.
    pub fn residuals(&self, x: &[T], s: &[T], y: &[T]) -> Residuals<T> {
        let prog = &self.prog;
        let (n, m) = (prog.n(), prog.m());
        let mut ax = vec![T::zero(); m];
        prog.a.gemv(T::one(), x, &mut ax);
        let mut rp = vec![T::zero(); m];
        for i in 0..m {
            rp[i] = ax[i] + s[i] - prog.b[i];
        }
        let mut px = vec![T::zero(); n];
        if let Some(p) = &prog.p {
            p.symv_upper(T::one(), x, &mut px);
        }
        let mut aty = vec![T::zero(); n];
        prog.a.gemv_t(T::one(), y, &mut aty);
        let mut rd = vec![T::zero(); n];
        for j in 0..n {
            rd[j] = px[j] + prog.c[j] + aty[j];
        }
        let xpx = dot(&px, x);
        let pobj = T::lit(0.5) * xpx + dot(&prog.c, x);
        let dobj = -T::lit(0.5) * xpx - dot(&prog.b, y);
        let one = T::one();
        let p_scale = norm_inf(&ax).max(norm_inf(s)).max(norm_inf(&prog.b));
        let d_scale = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&prog.c));
        Residuals {
            primal: norm_inf(&rp) / (one + p_scale),
            dual: norm_inf(&rd) / (one + d_scale),
            gap: (pobj - dobj).abs() / (one + pobj.abs().max(dobj.abs())),
        }
    }

    fn primal_infeasible(&self, dy: &[T]) -> bool {
        // certificate w ∈ K*, Aᵀw = 0, bᵀw < 0 with w = -Δy (unscaled)
        let m = self.prog.m();
        let w: Vec<T> = dy.iter().zip(&self.e).map(|(&v, &e)| -v * e / self.gamma).collect();
        let nw = norm_inf(&w);
        if nw <= T::lit(1e-30) {
            return false;
        }
        let w: Vec<T> = w.iter().map(|&v| v / nw).collect();
        let eps = self.settings.infeasibility_tol;
        let mut atw = vec![T::zero(); self.prog.n()];
        self.prog.a.gemv_t(T::one(), &w, &mut atw);
        if norm_inf(&atw) > eps {
            return false;
        }
        if dot(&self.prog.b, &w) >= -eps {
            return false;
        }
        let proj = self.projected(w.clone(), true);
        let dist = (0..m).fold(T::zero(), |acc, i| acc.max((w[i] - proj[i]).abs()));
        dist <= eps
    }

    fn dual_infeasible(&self, dx: &[T]) -> bool {
        // certificate v with Pv = 0, cᵀv < 0, -Av ∈ K
        let v: Vec<T> = dx.iter().zip(&self.d).map(|(&v, &d)| v * d).collect();
        let nv = norm_inf(&v);
        if nv <= T::lit(1e-30) {
            return false;
        }
        let v: Vec<T> = v.iter().map(|&x| x / nv).collect();
        let eps = self.settings.infeasibility_tol;
        if let Some(p) = &self.prog.p {
            let mut pv = vec![T::zero(); v.len()];
            p.symv_upper(T::one(), &v, &mut pv);
            if norm_inf(&pv) > eps {
                return false;
            }
        }
        if dot(&self.prog.c, &v) >= -eps {
            return false;
        }
        let mut nav = vec![T::zero(); self.prog.m()];
        self.prog.a.gemv(-T::one(), &v, &mut nav);
        let proj = self.projected(nav.clone(), false);
        let dist = nav
            .iter()
            .zip(&proj)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        dist <= eps
    }

    /// Runs the iteration from the current (possibly warm) iterate.
    pub fn solve(&mut self) -> ConeSolution<T> {
        let (n, m) = (self.prog.n(), self.prog.m());
        let st = self.settings;
        let alpha = st.alpha;
        let one = T::one();
        let mut rhs = vec![T::zero(); n + m];
        let mut best: Option<(T, Vec<T>, Vec<T>, Vec<T>, Residuals<T>)> = None;
        let mut x_prev = self.x.clone();
        let mut y_prev = self.y.clone();
        let mut status = SolveStatus::MaxIters;
        let mut iters = 0;

        for k in 1..=st.max_iters.max(1) {
            iters = k;
            x_prev.copy_from_slice(&self.x);
            y_prev.copy_from_slice(&self.y);
            for j in 0..n {
                rhs[j] = st.sigma * self.x[j] - self.c_s[j];
            }
            for i in 0..m {
                rhs[n + i] = self.b_s[i] - self.s[i] + self.y[i] / self.rho_vec[i];
            }
            self.factor.solve_in_place(&mut rhs);
            let mut s_relax = vec![T::zero(); m];
            for i in 0..m {
                let nu = rhs[n + i];
                let s_tilde = self.s[i] - (nu + self.y[i]) / self.rho_vec[i];
                s_relax[i] = alpha * s_tilde + (one - alpha) * self.s[i];
            }
            for j in 0..n {
                self.x[j] = alpha * rhs[j] + (one - alpha) * self.x[j];
            }
            let mut v = vec![T::zero(); m];
            for i in 0..m {
                v[i] = s_relax[i] + self.y[i] / self.rho_vec[i];
            }
            let s_new = self.projected(v, false);
            for i in 0..m {
                self.y[i] += self.rho_vec[i] * (s_relax[i] - s_new[i]);
            }
            self.s = s_new;

            if k % st.check_every.max(1) == 0 || k == st.max_iters {
                let (x, s, y) = self.unscaled();
                let res = self.residuals(&x, &s, &y);
                if res.primal <= st.tol && res.dual <= st.tol && res.gap <= st.tol {
                    let objective = self.prog.objective(&x);
                    return ConeSolution {
                        x,
                        s,
                        y,
                        status: SolveStatus::Optimal,
                        residuals: res,
                        objective,
                        iterations: k,
                    };
                }
                let worst = res.primal.max(res.dual).max(res.gap);
                if best.as_ref().is_none_or(|b| worst < b.0) {
                    best = Some((worst, x, s, y, res));
                }
                let dy: Vec<T> = self.y.iter().zip(&y_prev).map(|(&a, &b)| a - b).collect();
                if self.primal_infeasible(&dy) {
                    status = SolveStatus::Infeasible;
                    break;
                }
                let dx: Vec<T> = self.x.iter().zip(&x_prev).map(|(&a, &b)| a - b).collect();
                if self.dual_infeasible(&dx) {
                    status = SolveStatus::Unbounded;
                    break;
                }
                if st.adaptive_rho {
                    if let Some(rho) = self.rho_estimate() {
                        let ratio = rho / self.rho;
                        if (ratio > T::lit(5.0) || ratio < T::lit(0.2)) && self.update_rho(rho).is_err() {
                            break;
                        }
                    }
                }
            }
        }

        match status {
            SolveStatus::Infeasible | SolveStatus::Unbounded => {
                let (x, s, y) = self.unscaled();
                let res = self.residuals(&x, &s, &y);
                let objective = self.prog.objective(&x);
                ConeSolution {
                    x,
                    s,
                    y,
                    status,
                    residuals: res,
                    objective,
                    iterations: iters,
                }
            }
            _ => {
                let (x, s, y, res) = match best {
                    Some((_, x, s, y, r)) => (x, s, y, r),
                    None => {
                        let (x, s, y) = self.unscaled();
                        let r = self.residuals(&x, &s, &y);
                        (x, s, y, r)
                    }
                };
                let objective = self.prog.objective(&x);
                ConeSolution {
                    x,
                    s,
                    y,
                    status: SolveStatus::MaxIters,
                    residuals: res,
                    objective,
                    iterations: iters,
                }
            }
        }
    }

    fn rho_estimate(&self) -> Option<T> {
        let (n, m) = (self.prog.n(), self.prog.m());
        let tiny = T::lit(1e-12);
        let mut ax = vec![T::zero(); m];
        self.a_s.gemv(T::one(), &self.x, &mut ax);
        let mut rp = T::zero();
        for i in 0..m {
            rp = rp.max((ax[i] + self.s[i] - self.b_s[i]).abs());
        }
        let mut px = vec![T::zero(); n];
        if let Some(p) = &self.p_s {
            p.symv_upper(T::one(), &self.x, &mut px);
        }
        let mut aty = vec![T::zero(); n];
        self.a_s.gemv_t(T::one(), &self.y, &mut aty);
        let mut rd = T::zero();
        for j in 0..n {
            rd = rd.max((px[j] + self.c_s[j] - aty[j]).abs());
        }
        let p_scale = norm_inf(&ax).max(norm_inf(&self.s)).max(norm_inf(&self.b_s)).max(tiny);
        let d_scale = norm_inf(&px).max(norm_inf(&aty)).max(norm_inf(&self.c_s)).max(tiny);
        let num = rp / p_scale;
        let den = rd / d_scale;
        if den <= tiny || num <= tiny {
            return None;
        }
        let rho = self.rho * (num / den).sqrt();
        Some(rho.max(T::lit(RHO_MIN)).min(T::lit(RHO_MAX)))
    }

    pub fn factor_nnz(&self) -> usize {
        self.factor.factor_nnz()
    }
}

fn sym_col_norms_inf<T: Real>(p: &CscMatrix<T>) -> Vec<T> {
    let mut out = vec![T::zero(); p.ncols];
    for j in 0..p.ncols {
        for (i, v) in p.col(j) {
            out[j] = out[j].max(v.abs());
            out[i] = out[i].max(v.abs());
        }
    }
    out
}

/// One-shot solve with default settings apart from `tol` and `max_iters`.
pub fn solve_cone_program<T: Real>(
    prog: &ConeProgram<T>,
    tol: T,
    max_iters: usize,
) -> Result<ConeSolution<T>, ConicError> {
    let settings = Settings {
        tol,
        max_iters,
        ..Settings::default()
    };
    let mut solver = ConeSolver::new(prog.clone(), settings)?;
    Ok(solver.solve())
}
