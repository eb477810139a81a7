//! Compressed sparse row matrices over `f64` or `Complex64`.
//!
//! Only the handful of operations the simulator needs: assembly from
//! triplets, complex matrix-vector products, transposes, sums, products and
//! dense export for small-dimension checks.

use std::fmt::Debug;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub trait Scalar: nalgebra::ComplexField<RealField = f64> + Copy + Debug + Send + Sync + 'static {
    fn to_c64(self) -> Complex64;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn to_c64(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    #[inline]
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    #[inline]
    fn to_c64(self) -> Complex64 {
        self
    }
    #[inline]
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles a matrix from `(row, col, value)` triplets. Duplicate entries
    /// are summed; entries that sum to exactly zero are dropped.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, T)>,
    {
        let mut trips: Vec<(usize, usize, T)> = triplets.into_iter().collect();
        trips.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<T> = Vec::with_capacity(trips.len());
        let mut rows = Vec::with_capacity(trips.len());
        for (r, c, v) in trips {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if rows.last() == Some(&r) && indices.last() == Some(&c) {
                let last = values.last_mut().unwrap();
                *last += v;
            } else {
                rows.push(r);
                indices.push(c);
                values.push(v);
            }
        }
        let mut kept_idx = Vec::with_capacity(indices.len());
        let mut kept_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != T::zero() {
                indptr[r + 1] += 1;
                kept_idx.push(c);
                kept_val.push(v);
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices: kept_idx,
            values: kept_val,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![T::one(); n])
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let n = diag.len();
        Self::from_triplets(n, n, diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
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

    /// Nonzero entries of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn matvec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, v) in self.row(r) {
                acc += v.to_c64() * x[c];
            }
            *out = acc;
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(r, c, v)| (c, r, v.conjugate())),
        )
    }

    pub fn scale(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut trips = Vec::new();
        for r in 0..self.nrows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    trips.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, trips)
    }

    /// Maximum entry of `|A - A^†|`.
    pub fn hermitian_defect(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r).conjugate()).magnitude())
            .chain(
                // entries present only in the transposed position
                self.triplets()
                    .filter(|&(r, c, _)| self.get(c, r) == T::zero())
                    .map(|(_, _, v)| v.magnitude()),
            )
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).max_abs()
    }

    /// Block `rows x cols` (half-open ranges) as its own matrix.
    pub fn submatrix(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        let (r0, c0) = (rows.start, cols.start);
        Self::from_triplets(
            rows.len(),
            cols.len(),
            rows.clone().flat_map(|r| {
                let cols = cols.clone();
                self.row(r)
                    .filter(move |(c, _)| cols.contains(c))
                    .map(move |(c, v)| (r - r0, c - c0, v))
            }),
        )
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::<T>::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }
}
