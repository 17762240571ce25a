//! Compressed sparse column storage.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix<T> {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<T>,
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

    /// Builds from `(row, col, value)` triplets; duplicates are summed, entries stay
    /// even when they are exactly zero so the pattern is reproducible.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of {nrows}x{ncols}");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            rows[next[c]] = r;
            vals[next[c]] = v;
            next[c] += 1;
        }
        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowind = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        colptr.push(0);
        let mut scratch: Vec<(usize, T)> = Vec::new();
        for c in 0..ncols {
            scratch.clear();
            scratch.extend((counts[c]..counts[c + 1]).map(|k| (rows[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(r, v) in &scratch {
                if rowind.len() > colptr[c] && *rowind.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    rowind.push(r);
                    values.push(v);
                }
            }
            colptr.push(rowind.len());
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<T>) -> Self {
        let mut trip = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != T::zero() {
                    trip.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowind(&self) -> &[usize] {
        &self.rowind
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Iterates `(row, col, value)` in column-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.colptr[c]..self.colptr[c + 1]).map(move |k| (self.rowind[k], c, self.values[k]))
        })
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        self.iter().collect()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let range = self.colptr[c]..self.colptr[c + 1];
        match self.rowind[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    /// Entries on or above the diagonal.
    pub fn upper_triangle(&self) -> Self {
        let trip: Vec<_> = self.iter().filter(|(r, c, _)| r <= c).collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        let mut y = DVector::zeros(self.nrows);
        self.mul_vec_acc(x, &mut y);
        y
    }

    /// `y += A x`.
    pub fn mul_vec_acc(&self, x: &DVector<T>, y: &mut DVector<T>) {
        for c in 0..self.ncols {
            let xc = x[c];
            if xc == T::zero() {
                continue;
            }
            for k in self.colptr[c]..self.colptr[c + 1] {
                y[self.rowind[k]] += self.values[k] * xc;
            }
        }
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        let mut y = DVector::zeros(self.ncols);
        for c in 0..self.ncols {
            let mut acc = T::zero();
            for k in self.colptr[c]..self.colptr[c + 1] {
                acc += self.values[k] * x[self.rowind[k]];
            }
            y[c] = acc;
        }
        y
    }

    pub fn col_inf_norms(&self) -> Vec<T> {
        (0..self.ncols)
            .map(|c| {
                self.values[self.colptr[c]..self.colptr[c + 1]]
                    .iter()
                    .fold(T::zero(), |m, v| m.max(v.abs()))
            })
            .collect()
    }

    pub fn row_inf_norms(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.nrows];
        for (r, _, v) in self.iter() {
            out[r] = out[r].max(v.abs());
        }
        out
    }

    /// `A ← diag(rows) A diag(cols)`.
    pub fn scale(&mut self, rows: &[T], cols: &[T]) {
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                self.values[k] *= rows[self.rowind[k]] * cols[c];
            }
        }
    }

    pub fn scale_values(&mut self, s: T) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.ncols);
        let mut trip = self.triplets();
        trip.extend(other.iter().map(|(r, c, v)| (r + self.nrows, c, v)));
        Self::from_triplets(self.nrows + other.nrows, self.ncols, &trip)
    }
}
