//! Minimal dense row-major matrix used by the operators and the predictor.
//!
//! Everything here is desk-scale; plain `Vec` storage with explicit loops
//! keeps the numerics transparent and the reduction order fixed.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// y = self^T applied as x (len rows) -> y (len cols): y[j] = sum_i x[i] * self[i][j].
    /// Row-major weight layout `in_dim x out_dim`, matching the FC convention here.
    pub fn vec_mul(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows, "vec_mul input length");
        let mut y = vec![S::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.row(i);
            for (j, &wij) in row.iter().enumerate() {
                y[j] += xi * wij;
            }
        }
        y
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Fully-connected layer with bias: y = W^T x + b, W stored `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<S> {
    pub w: Mat<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> Affine<S> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            w: Mat::zeros(in_dim, out_dim),
            b: vec![S::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut y = self.w.vec_mul(x);
        for (yj, &bj) in y.iter_mut().zip(&self.b) {
            *yj += bj;
        }
        y
    }
}
