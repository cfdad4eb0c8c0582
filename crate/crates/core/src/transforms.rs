//! Dense linear operators: row-major matrices, the orthonormal DCT-II
//! dictionary, and power-iteration estimates of the spectral norm.
//!
//! The matrix-vector kernels accumulate in four interleaved lanes so the
//! compiler can vectorize them. `apply_transpose` uses the same lane layout
//! as `apply`, which makes `apply_transpose(m, y)` and
//! `apply(&m.transpose(), y)` agree bit for bit.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking `C·Cᵀ = I`.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::mismatch("matrix entries", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::mismatch("matrix row length", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::mismatch("matmul inner dimension", self.cols, other.rows));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                axpy(out_row, a, other.row(k));
            }
        }
        Ok(out)
    }

    /// Largest absolute deviation of `self · selfᵀ` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i..self.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.row(i), self.row(j)) - target).abs());
            }
        }
        worst
    }
}

/// A square matrix whose rows form an orthonormal basis, so its inverse is
/// its transpose and its spectral norm is one.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalTransform {
    matrix: DenseMatrix,
}

impl OrthonormalTransform {
    /// Wraps `matrix` after checking `matrix · matrixᵀ = I` within
    /// [`ORTHONORMAL_TOL`].
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidDimension(format!(
                "orthonormal transform must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let defect = matrix.orthonormality_defect();
        if defect > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameter(format!(
                "matrix is not orthonormal (max deviation {defect:e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply(&self.matrix, x)
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        apply_transpose(&self.matrix, y)
    }
}

/// Orthonormal DCT-II matrix with
/// `C[k][j] = sqrt(2/n) · c_k · cos(π (2j+1) k / (2n))`, `c_0 = 1/√2`.
pub fn build_dct_matrix(n: usize) -> Result<OrthonormalTransform> {
    if n == 0 {
        return Err(Error::InvalidDimension("DCT size must be at least 1".into()));
    }
    let period = 4 * n;
    let mut m = DenseMatrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for j in 0..n {
            // cos has period 4n in units of π/(2n); reduce before scaling
            let phase = ((2 * j + 1) * k) % period;
            let angle = PI * phase as f64 / (2 * n) as f64;
            m.set(k, j, scale * angle.cos());
        }
    }
    Ok(OrthonormalTransform { matrix: m })
}

/// A random orthonormal matrix: Gram-Schmidt (applied twice) on a seeded
/// uniform matrix.
pub fn random_orthonormal(seed: u64, n: usize) -> Result<OrthonormalTransform> {
    if n == 0 {
        return Err(Error::InvalidDimension("transform size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut m = DenseMatrix::zeros(n, n);
        for v in m.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        if gram_schmidt_rows(&mut m) {
            return OrthonormalTransform::new(m);
        }
    }
}

fn gram_schmidt_rows(m: &mut DenseMatrix) -> bool {
    let n = m.rows();
    for i in 0..n {
        for _pass in 0..2 {
            for j in 0..i {
                let (head, tail) = m.as_mut_slice().split_at_mut(i * n);
                let basis = &head[j * n..(j + 1) * n];
                let row = &mut tail[..n];
                let proj = dot(row, basis);
                axpy(row, -proj, basis);
            }
        }
        let row = m.row_mut(i);
        let norm = dot(row, row).sqrt();
        if norm < 1e-8 {
            return false;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    true
}

/// Four-lane dot product; the lane layout fixes the summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha · x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `m · x`
pub fn apply(m: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != m.cols {
        return Err(Error::mismatch("apply", m.cols, x.len()));
    }
    let mut out = vec![0.0; m.rows];
    apply_into(m, x, &mut out);
    Ok(out)
}

/// `out = m · x` without shape checks; callers guarantee the lengths.
pub(crate) fn apply_into(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), x);
    }
}

/// `mᵀ · y`
pub fn apply_transpose(m: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != m.rows {
        return Err(Error::mismatch("apply_transpose", m.rows, y.len()));
    }
    let mut out = vec![0.0; m.cols];
    apply_transpose_into(m, y, &mut out);
    Ok(out)
}

/// `out = mᵀ · y`, summing rows in the same lane order `dot` uses.
pub(crate) fn apply_transpose_into(m: &DenseMatrix, y: &[f64], out: &mut [f64]) {
    let cols = m.cols;
    let mut lanes = vec![0.0_f64; 4 * cols];
    let full = m.rows - m.rows % 4;
    for i in 0..full {
        let yi = y[i];
        if yi == 0.0 {
            continue;
        }
        let lane = &mut lanes[(i % 4) * cols..(i % 4 + 1) * cols];
        for (l, &mij) in lane.iter_mut().zip(m.row(i)) {
            *l += mij * yi;
        }
    }
    let (l01, l23) = lanes.split_at(2 * cols);
    let (l0, l1) = l01.split_at(cols);
    let (l2, l3) = l23.split_at(cols);
    for j in 0..cols {
        out[j] = (l0[j] + l1[j]) + (l2[j] + l3[j]);
    }
    for (i, &yi) in y.iter().enumerate().skip(full) {
        if yi == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += mij * yi;
        }
    }
}

/// Estimates the largest singular value of `m` by power iteration on `mᵀm`.
///
/// The iteration starts from the normalized all-ones vector. If that vector
/// lies in the null space of `m`, it restarts from the standard basis vector
/// of the column with the largest norm. Iteration stops once successive
/// estimates differ by at most `tol · estimate`, or after `max_iter` steps.
pub fn operator_norm_estimate(m: &DenseMatrix, max_iter: usize, tol: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if m.as_slice().iter().all(|&v| v == 0.0) || m.cols == 0 {
        return Ok(0.0);
    }
    let n = m.cols;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut mv = apply(m, &v)?;
    if norm2(&mv) == 0.0 {
        let best_col = (0..n)
            .max_by(|&a, &b| {
                let na: f64 = (0..m.rows).map(|i| m.get(i, a).powi(2)).sum();
                let nb: f64 = (0..m.rows).map(|i| m.get(i, b).powi(2)).sum();
                na.total_cmp(&nb)
            })
            .unwrap_or(0);
        v = vec![0.0; n];
        v[best_col] = 1.0;
        mv = apply(m, &v)?;
    }
    let mut estimate = norm2(&mv);
    for _ in 0..max_iter {
        let mut w = apply_transpose(m, &mv)?;
        let wn = norm2(&w);
        if wn == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        mv = apply(m, &v)?;
        let next = norm2(&mv);
        let converged = (next - estimate).abs() <= tol * next;
        estimate = next;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
