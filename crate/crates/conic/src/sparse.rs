//! Compressed sparse column storage.

use crate::Real;

/// Compressed sparse column matrix with sorted, duplicate-free row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> CscMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; explicit zeros are kept so that the pattern is stable.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].1, triplets[k].0));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowind = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                let n = values.len();
                values[n - 1] += v;
            } else {
                rowind.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.colptr[j]..self.colptr[j + 1];
        self.rowind[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out.push((i, j, v));
            }
        }
        out
    }

    /// `y += alpha * A x`
    pub fn gemv(&self, alpha: T, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = alpha * x[j];
            if xj == T::zero() {
                continue;
            }
            for (i, v) in self.col(j) {
                y[i] += v * xj;
            }
        }
    }

    /// `y += alpha * Aᵀ x`
    pub fn gemv_t(&self, alpha: T, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut acc = T::zero();
            for (i, v) in self.col(j) {
                acc += v * x[i];
            }
            y[j] += alpha * acc;
        }
    }

    /// `y += alpha * S x` where `self` stores the upper triangle of a symmetric `S`.
    pub fn symv_upper(&self, alpha: T, x: &[T], y: &mut [T]) {
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                y[i] += alpha * v * x[j];
                if i != j {
                    y[j] += alpha * v * x[i];
                }
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// Scales rows by `dr` and columns by `dc` in place.
    pub fn scale(&mut self, dr: &[T], dc: &[T]) {
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowind[k];
                self.values[k] *= dr[i] * dc[j];
            }
        }
    }

    /// Infinity norm of every column.
    pub fn col_norms_inf(&self) -> Vec<T> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(T::zero(), |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Infinity norm of every row.
    pub fn row_norms_inf(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.nrows];
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                out[i] = out[i].max(v.abs());
            }
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<T> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for (i, v) in self.col(j) {
                m[(i, j)] += v;
            }
        }
        m
    }
}
