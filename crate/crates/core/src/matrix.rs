//! Small dense-matrix helpers shared across modules.

use faer::Mat;
use serde::{Deserialize, Serialize};

/// Row-major serialized form of a dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Mat<f64>> for MatrixDoc {
    fn from(m: &Mat<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixDoc {
    pub fn to_mat(&self) -> Option<Mat<f64>> {
        if self.data.len() != self.rows * self.cols {
            return None;
        }
        Some(Mat::from_fn(self.rows, self.cols, |i, j| {
            self.data[i * self.cols + j]
        }))
    }
}

/// Builds a matrix from row slices. All rows must share a length.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Mat::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

pub fn row(m: &Mat<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

pub fn trace(m: &Mat<f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn frobenius(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Largest absolute asymmetry |a_ij - a_ji|.
pub fn max_asymmetry(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Replaces `m` with (m + mᵀ)/2.
pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Returns `m + shift * I`.
pub fn add_diagonal(m: &Mat<f64>, shift: f64) -> Mat<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += shift;
    }
    out
}

/// tr(a · b) without forming the product.
pub fn trace_of_product(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// First `m` columns of `a`.
pub fn leading_columns(a: &Mat<f64>, m: usize) -> Mat<f64> {
    Mat::from_fn(a.nrows(), m, |i, j| a[(i, j)])
}

pub fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows());
    assert_eq!(a.ncols(), b.ncols());
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}
