//! Sparse LDLᵀ factorization for quasi-definite matrices.
//!
//! Quasi-definite matrices `[[H, Aᵀ], [A, -G]]` with `H ≻ 0`, `G ≻ 0` admit an
//! LDLᵀ factorization under any symmetric permutation, so no pivoting is
//! performed. The fill-reducing permutation comes from approximate minimum
//! degree; the numeric phase is an up-looking elimination driven by the
//! elimination tree. The symbolic analysis is kept so that matrices with the
//! same pattern can be refactored cheaply.

use crate::{CscMatrix, Real};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("input must store the upper triangle only (entry ({0},{1}) below diagonal)")]
    NotUpper(usize, usize),
    #[error("zero pivot at permuted column {0}")]
    ZeroPivot(usize),
    #[error("fill-reducing ordering failed")]
    Ordering,
}

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LdlFactor<T> {
    n: usize,
    perm: Vec<usize>,
    // permuted upper-triangular pattern
    cp: Vec<usize>,
    ci: Vec<usize>,
    // destination of each input nonzero inside the permuted value array
    map: Vec<usize>,
    cx: Vec<T>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
    d: Vec<T>,
    dinv: Vec<T>,
    positive_pivots: usize,
}

impl<T: Real> LdlFactor<T> {
    /// Analyses and factors `upper`, the upper triangle (diagonal included)
    /// of a symmetric matrix. Every diagonal entry must be present.
    pub fn new(upper: &CscMatrix<T>) -> Result<Self, LdlError> {
        let n = upper.nrows;
        if upper.ncols != n {
            return Err(LdlError::NotSquare(upper.nrows, upper.ncols));
        }
        for j in 0..n {
            for (i, _) in upper.col(j) {
                if i > j {
                    return Err(LdlError::NotUpper(i, j));
                }
            }
        }
        let perm = if n > 0 {
            let ap: Vec<i64> = upper.colptr.iter().map(|&v| v as i64).collect();
            let ai: Vec<i64> = upper.rowind.iter().map(|&v| v as i64).collect();
            let (p, _, _) = amd::order(n as i64, &ap, &ai, &amd::Control::default()).map_err(|_| LdlError::Ordering)?;
            p.into_iter().map(|v| v as usize).collect()
        } else {
            Vec::new()
        };
        Self::with_permutation(upper, perm)
    }

    /// Same as [`LdlFactor::new`] but with a caller-supplied ordering
    /// (`perm[k]` is the original index placed at position `k`).
    pub fn with_permutation(upper: &CscMatrix<T>, perm: Vec<usize>) -> Result<Self, LdlError> {
        let n = upper.nrows;
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        // permuted pattern, keeping track of where each input entry lands
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(upper.nnz());
        for j in 0..n {
            for k in upper.colptr[j]..upper.colptr[j + 1] {
                let i = upper.rowind[k];
                let (pi, pj) = (iperm[i], iperm[j]);
                let (r, c) = if pi <= pj { (pi, pj) } else { (pj, pi) };
                entries.push((c, r, k));
            }
        }
        entries.sort_unstable();
        let mut cp = vec![0usize; n + 1];
        let mut ci = Vec::with_capacity(entries.len());
        let mut map = vec![0usize; upper.nnz()];
        for (pos, &(c, r, k)) in entries.iter().enumerate() {
            cp[c + 1] += 1;
            ci.push(r);
            map[k] = pos;
        }
        for c in 0..n {
            cp[c + 1] += cp[c];
        }
        let mut has_diag = vec![false; n];
        for c in 0..n {
            for &r in &ci[cp[c]..cp[c + 1]] {
                if r == c {
                    has_diag[c] = true;
                }
            }
        }
        if let Some(c) = has_diag.iter().position(|&h| !h) {
            return Err(LdlError::ZeroPivot(c));
        }

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ci[cp[j]..cp[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        let mut f = Self {
            n,
            perm,
            cp,
            ci,
            map,
            cx: vec![T::zero(); entries.len()],
            etree,
            lnz,
            lp,
            li: vec![0; total],
            lx: vec![T::zero(); total],
            d: vec![T::zero(); n],
            dinv: vec![T::zero(); n],
            positive_pivots: 0,
        };
        f.refactor(&upper.values)?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of nonzeros in the strictly lower factor.
    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Number of positive entries of `D`; equals the dimension of the
    /// positive definite block for a quasi-definite matrix.
    pub fn positive_pivots(&self) -> usize {
        self.positive_pivots
    }

    /// Numeric refactorization with new values on the original pattern
    /// (same ordering as the `values` array of the matrix passed at construction).
    pub fn refactor(&mut self, values: &[T]) -> Result<(), LdlError> {
        assert_eq!(values.len(), self.map.len());
        for x in self.cx.iter_mut() {
            *x = T::zero();
        }
        for (k, &pos) in self.map.iter().enumerate() {
            self.cx[pos] += values[k];
        }
        let n = self.n;
        let mut y_vals = vec![T::zero(); n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.positive_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0usize;
            self.d[k] = T::zero();
            for p in self.cp[k]..self.cp[k + 1] {
                let b = self.ci[p];
                if b == k {
                    self.d[k] = self.cx[p];
                    continue;
                }
                y_vals[b] = self.cx[p];
                if !y_marked[b] {
                    y_marked[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[ne] = next;
                        ne += 1;
                        next = self.etree[next];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next_space[c] += 1;
                y_vals[c] = T::zero();
                y_marked[c] = false;
            }
            if self.d[k] == T::zero() || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            if self.d[k] > T::zero() {
                self.positive_pivots += 1;
            }
            self.dinv[k] = T::one() / self.d[k];
        }
        Ok(())
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != T::zero() {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }

    /// Column counts of the factor (per permuted column).
    pub fn column_counts(&self) -> &[usize] {
        &self.lnz
    }
}
