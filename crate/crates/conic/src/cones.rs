//! Cone descriptors, scaled symmetric vectorization and Euclidean projections.

use crate::Real;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// One factor of a product cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `{0}^n`
    Zero(usize),
    /// `R^n_+`
    Nonneg(usize),
    /// `{(t, x) : ‖x‖₂ ≤ t}` of total dimension `n`.
    Soc(usize),
    /// Symmetric PSD matrices of side `k`, stored as `svec` of length `k(k+1)/2`.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
            Cone::Psd(k) => k * (k + 1) / 2,
        }
    }

    /// Blocks whose rows must share one equilibration factor.
    pub(crate) fn needs_uniform_scaling(&self) -> bool {
        matches!(self, Cone::Soc(_) | Cone::Psd(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("eigendecomposition produced non-finite values")]
    Eigen,
}

/// Length of `svec` for a `k × k` symmetric matrix.
pub fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Position of entry `(i, j)` (either triangle) in the column-major upper
/// triangular `svec` ordering.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    c * (c + 1) / 2 + r
}

/// Scaled vectorization: off-diagonal entries multiplied by `√2` so that
/// `⟨svec A, svec B⟩ = trace(A B)`.
pub fn svec<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let k = m.nrows();
    let s2 = T::lit(std::f64::consts::SQRT_2);
    let mut out = Vec::with_capacity(svec_len(k));
    for j in 0..k {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(s2 * (m[(i, j)] + m[(j, i)]) * T::lit(0.5));
            }
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat<T: Real>(v: &[T], k: usize) -> DMatrix<T> {
    assert_eq!(v.len(), svec_len(k));
    let inv_s2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[idx];
            } else {
                m[(i, j)] = v[idx] * inv_s2;
                m[(j, i)] = v[idx] * inv_s2;
            }
            idx += 1;
        }
    }
    m
}

/// Side length `k` with `k(k+1)/2 == len`, if any.
pub fn svec_side(len: usize) -> Option<usize> {
    let k = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(k) == len).then_some(k)
}

/// Frobenius-nearest PSD matrix: eigendecomposition with negative eigenvalues
/// clamped to zero. The input is symmetrized first.
pub fn project_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>, ProjectionError> {
    let k = m.nrows();
    assert_eq!(k, m.ncols(), "project_psd needs a square matrix");
    if k == 0 {
        return Ok(m.clone());
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    if k == 1 {
        return Ok(DMatrix::from_element(1, 1, sym[(0, 0)].max(T::zero())));
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::Eigen);
    }
    if eig.eigenvalues.iter().all(|&v| v >= T::zero()) {
        return Ok(sym);
    }
    let mut out = DMatrix::zeros(k, k);
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > T::zero() {
            let q = eig.eigenvectors.column(idx);
            out += q * q.transpose() * lam;
        }
    }
    Ok((&out + out.transpose()) * T::lit(0.5))
}

/// Projection onto the second-order cone `{(t, x) : ‖x‖ ≤ t}`.
pub fn project_soc<T: Real>(v: &DVector<T>) -> DVector<T> {
    let mut out = v.clone();
    project_soc_slice(out.as_mut_slice());
    out
}

pub(crate) fn project_soc_slice<T: Real>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let t = v[0];
    let nx = v[1..].iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    if nx <= t {
        return;
    }
    if nx <= -t {
        v.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let a = (nx + t) * T::lit(0.5);
    v[0] = a;
    let f = a / nx;
    for x in v[1..].iter_mut() {
        *x *= f;
    }
}

pub(crate) fn project_psd_svec<T: Real>(v: &mut [T]) -> Result<(), ProjectionError> {
    let k = svec_side(v.len()).expect("svec length");
    if k == 1 {
        v[0] = v[0].max(T::zero());
        return Ok(());
    }
    let m = smat(v, k);
    let p = project_psd(&m)?;
    v.copy_from_slice(&svec(&p));
    Ok(())
}

/// Projects `v` onto the cone `cone` in place.
pub fn project_block<T: Real>(cone: &Cone, v: &mut [T]) {
    match cone {
        Cone::Zero(_) => v.iter_mut().for_each(|x| *x = T::zero()),
        Cone::Nonneg(_) => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
        Cone::Soc(_) => project_soc_slice(v),
        Cone::Psd(_) => {
            if project_psd_svec(v).is_err() {
                v.iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }
}

/// Projects onto the dual cone (the free space for the zero cone; the other
/// cones are self-dual).
pub fn project_dual_block<T: Real>(cone: &Cone, v: &mut [T]) {
    match cone {
        Cone::Zero(_) => {}
        other => project_block(other, v),
    }
}
