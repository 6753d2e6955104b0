//! Dense linear algebra kernel.
//!
//! A small row-major [`Matrix`] plus the three decompositions every other
//! module relies on:
//!
//! - [`svd`]: thin SVD by one-sided (Hestenes) Jacobi rotations,
//! - [`eig_sym`]: symmetric eigendecomposition by cyclic Jacobi rotations,
//! - [`inv_sqrt_psd`]: `V diag((w + eps)^{-1/2}) Vᵀ` for PSD matrices.
//!
//! All routines are deterministic: the same input always yields bit-identical
//! output. Singular vectors and eigenvectors are sign-normalised so that the
//! entry of largest magnitude in each left vector is non-negative (ties go to
//! the lowest index).

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold below which singular values / eigenvalues are treated
/// as zero when inverting.
pub const RANK_CLAMP: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {got} does not match {rows}x{cols}")]
    InvalidData { rows: usize, cols: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("{routine} did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence {
        routine: &'static str,
        sweeps: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense real matrix stored in row-major order: `data[i * cols + j]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting NaN/Inf entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidData {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    ///
    /// Panics on ragged input or non-finite entries; intended for literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols, "row {i} has {} entries, expected {ncols}", r.len());
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data).expect("finite literal matrix")
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column {j} has wrong length");
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        m
    }

    /// Entry-wise construction from a closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Keeps the leading `n` columns.
    pub fn take_columns(&self, n: usize) -> Matrix {
        assert!(n <= self.cols);
        Matrix::from_fn(self.rows, n, |i, j| self[(i, j)])
    }

    /// Keeps the leading `n` rows.
    pub fn take_rows(&self, n: usize) -> Matrix {
        assert!(n <= self.rows);
        Matrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    /// Gathers the listed columns in order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (k, &j) in idx.iter().enumerate() {
                dst[k] = src[j];
            }
        }
        out
    }

    /// `self · other`. Panics on shape mismatch; see [`Matrix::try_matmul`].
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        self.try_matmul(other).expect("matmul shape mismatch")
    }

    pub fn try_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let (m, n) = (self.rows, other.rows);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out.data[i * n + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let (m, n) = (self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for p in 0..self.rows {
            let a_row = self.row(p);
            let b_row = other.row(p);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "element-wise shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, c: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Row sums (length `rows`).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Column sums (length `cols`).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Mean of each row, i.e. the per-feature mean when columns are samples.
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.cols.max(1) as f64;
        self.row_sums().into_iter().map(|s| s / n).collect()
    }

    /// Subtracts `offsets[i]` from every entry of row `i`.
    pub fn sub_row_offsets(&self, offsets: &[f64]) -> Matrix {
        assert_eq!(offsets.len(), self.rows);
        let mut out = self.clone();
        for (i, &o) in offsets.iter().enumerate() {
            for v in out.row_mut(i) {
                *v -= o;
            }
        }
        out
    }

    /// Symmetric part `(A + Aᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix {
        let t = self.transpose();
        self.zip_with(&t, |a, b| 0.5 * (a + b))
    }

    /// Largest `|a_ij - a_ji|`, with its location.
    fn asymmetry(&self) -> (usize, usize, f64) {
        let mut worst = (0, 0, 0.0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let gap = (self[(i, j)] - self[(j, i)]).abs();
                if gap > worst.2 {
                    worst = (i, j, gap);
                }
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product with four independent accumulators so the loop vectorises.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Thin singular value decomposition `m = u · diag(s) · vt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Singular values, non-negative and descending.
    pub s: Vec<f64>,
    /// `k × cols` with orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

/// Index of the entry with the largest magnitude; ties go to the lowest index.
fn argmax_abs(v: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in v.into_iter().enumerate() {
        if x.abs() > best_val {
            best_val = x.abs();
            best = i;
        }
    }
    best
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Works on the column space of the taller orientation and converges when
/// every column pair is orthogonal to machine precision. Fails with
/// [`LinalgError::NoConvergence`] after `100 · max(rows, cols)` sweeps.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: pos / m.cols.max(1),
            col: pos % m.cols.max(1),
        });
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        // m = (mᵀ)ᵀ = (U S Vᵀ)ᵀ = V S Uᵀ
        let t = svd_tall(&m.transpose())?;
        let mut out = SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        };
        normalize_signs(&mut out);
        Ok(out)
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    let k = cols;
    if k == 0 || rows == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(rows, k),
            s: vec![0.0; k],
            vt: Matrix::zeros(k, cols),
        });
    }
    // Work column-major: a[j] is column j of m, v[j] is column j of V.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    let max_sweeps = 100 * rows.max(cols);
    let tol = f64::EPSILON;
    let mut converged = cols < 2;
    let mut sweeps = 0;
    let mut residual = 0.0;
    while !converged {
        if sweeps >= max_sweeps {
            return Err(LinalgError::NoConvergence {
                routine: "svd",
                sweeps,
                residual,
            });
        }
        sweeps += 1;
        residual = 0.0;
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in (p + 1)..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 {
                    continue;
                }
                let scale = (alpha * beta).sqrt();
                let off = gamma.abs() / scale;
                if !(off > tol) {
                    continue;
                }
                residual = f64::max(residual, off);
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let norms: Vec<f64> = a.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    // Stable sort keeps the original column order among exact ties.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let s_max = norms[order[0]];

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut s = Vec::with_capacity(k);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        if sigma > 0.0 && sigma > RANK_CLAMP * s_max * 1e-4 {
            u_cols.push(a[j].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(vec![0.0; rows]);
            pending.push(slot);
        }
        s.push(sigma);
    }
    // Columns of U for (numerically) zero singular values: complete the basis.
    for slot in pending {
        let basis = complete_basis(&u_cols, slot, rows);
        u_cols[slot] = basis;
    }
    let u = Matrix::from_columns(&u_cols);
    let mut vt = Matrix::zeros(k, cols);
    for (r, &j) in order.iter().enumerate() {
        vt.row_mut(r).copy_from_slice(&v[j]);
    }
    let mut out = SvdResult { u, s, vt };
    normalize_signs(&mut out);
    Ok(out)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Finds a unit vector orthogonal to every non-zero column in `cols`
/// (excluding `slot`), trying canonical basis vectors in order.
fn complete_basis(cols: &[Vec<f64>], slot: usize, rows: usize) -> Vec<f64> {
    for e in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[e] = 1.0;
        // Two passes of Gram–Schmidt for stability.
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if k == slot || c.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let proj = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm > 1e-6 {
            return cand.into_iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("a thin SVD never needs more than rows orthonormal columns")
}

fn normalize_signs(r: &mut SvdResult) {
    for j in 0..r.u.cols() {
        let col = r.u.column(j);
        let i = argmax_abs(col.iter().copied());
        if col[i] < 0.0 {
            for row in 0..r.u.rows() {
                r.u[(row, j)] = -r.u[(row, j)];
            }
            for v in r.vt.row_mut(j) {
                *v = -*v;
            }
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the second matrix, so that `m = V diag(w) Vᵀ`.
pub fn eig_sym(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    if !m.is_finite() {
        let pos = m.data.iter().position(|v| !v.is_finite()).unwrap();
        return Err(LinalgError::NonFinite {
            row: pos / cols,
            col: pos % cols,
        });
    }
    let n = rows;
    let scale = m.max_abs().max(1.0);
    let (ai, aj, gap) = m.asymmetry();
    if gap > SYMMETRY_TOL * scale {
        return Err(LinalgError::NotSymmetric {
            row: ai,
            col: aj,
            gap,
        });
    }
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    let max_sweeps = 100 * n.max(1);
    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off == 0.0 || off.sqrt() <= f64::EPSILON * 1e-2 * diag.sqrt() {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(LinalgError::NoConvergence {
                routine: "eig_sym",
                sweeps,
                residual: off.sqrt(),
            });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- Jᵀ A J with J the (p, q) rotation.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w: Vec<f64> = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j].partial_cmp(&w[i]).unwrap());
    let mut vecs = Matrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (c, &j) in order.iter().enumerate() {
        let mut col = v.column(j);
        let i = argmax_abs(col.iter().copied());
        if col[i] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vecs.set_column(c, &col);
        vals.push(w[j]);
    }
    Ok((vals, vecs))
}

/// Output of [`inv_sqrt_psd_detailed`].
#[derive(Debug, Clone)]
pub struct InvSqrt {
    pub matrix: Matrix,
    pub eigenvalues: Vec<f64>,
    /// Number of modes at or below `RANK_CLAMP · w_max` whose inverse was set to zero.
    pub clamped: usize,
}

/// `V diag((w_i + eps)^{-1/2}) Vᵀ` for a symmetric PSD matrix.
///
/// With `eps == 0`, modes with `w_i <= 1e-12 · w_max` are dropped (their
/// inverse is taken as zero) instead of producing infinities.
pub fn inv_sqrt_psd(m: &Matrix, eps: f64) -> Result<Matrix> {
    inv_sqrt_psd_detailed(m, eps).map(|r| r.matrix)
}

pub fn inv_sqrt_psd_detailed(m: &Matrix, eps: f64) -> Result<InvSqrt> {
    assert!(eps >= 0.0, "eps must be non-negative");
    let (w, v) = eig_sym(m)?;
    let w_max = w.first().copied().unwrap_or(0.0);
    let w_min = w.last().copied().unwrap_or(0.0);
    if w_min < -PSD_TOL * w_max.abs().max(1.0) {
        return Err(LinalgError::NotPsd {
            min_eigenvalue: w_min,
        });
    }
    let mut clamped = 0;
    let scaled: Vec<f64> = w
        .iter()
        .map(|&wi| {
            let wi = wi.max(0.0);
            if eps == 0.0 && wi <= RANK_CLAMP * w_max {
                clamped += 1;
                0.0
            } else {
                (wi + eps).powf(-0.5)
            }
        })
        .collect();
    Ok(InvSqrt {
        matrix: spectral_apply(&v, &scaled),
        eigenvalues: w,
        clamped,
    })
}

/// `V diag(values) Vᵀ`.
pub fn spectral_apply(v: &Matrix, values: &[f64]) -> Matrix {
    let n = v.rows();
    let mut vd = v.clone();
    for i in 0..n {
        for (x, d) in vd.row_mut(i).iter_mut().zip(values) {
            *x *= d;
        }
    }
    vd.matmul_t(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let d = a.sub(b).max_abs();
        assert!(d <= tol, "max deviation {d:e} > {tol:e}\n{a:?}\n{b:?}");
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn svd_identity() {
        let r = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0, 1.0]);
        assert_close(&r.reconstruct(), &Matrix::identity(3), 1e-15);
    }

    #[test]
    fn svd_diagonal_sign_convention() {
        let r = svd(&Matrix::from_diag(&[3.0, 2.0])).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0]);
        assert_close(&r.u, &Matrix::identity(2), 0.0);
        assert_close(&r.vt, &Matrix::identity(2), 0.0);

        let r = svd(&Matrix::from_diag(&[-3.0, 2.0])).unwrap();
        assert_close(&r.u, &Matrix::identity(2), 0.0);
        assert_close(&r.vt, &Matrix::from_diag(&[-1.0, 1.0]), 0.0);
    }

    #[test]
    fn svd_matches_gram_eigenvalues() {
        let m = random_matrix(5, 4, 11);
        let r = svd(&m).unwrap();
        let rel = r.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(rel < 1e-8, "reconstruction error {rel:e}");
        let (w, _) = eig_sym(&m.t_matmul(&m)).unwrap();
        for (s, w) in r.s.iter().zip(&w) {
            assert!((s - w.max(0.0).sqrt()).abs() < 1e-8);
        }
        assert_close(&r.u.t_matmul(&r.u), &Matrix::identity(4), 1e-10);
        assert_close(&r.vt.matmul_t(&r.vt), &Matrix::identity(4), 1e-10);
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let m = random_matrix(3, 7, 5);
        let r = svd(&m).unwrap();
        assert_eq!(r.u.shape(), (3, 3));
        assert_eq!(r.vt.shape(), (3, 7));
        assert_close(&r.reconstruct(), &m, 1e-12);

        // rank 1, 4x3
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let m = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let r = svd(&m).unwrap();
        assert!(r.s[1] < 1e-12 && r.s[2] < 1e-12);
        assert_close(&r.u.t_matmul(&r.u), &Matrix::identity(3), 1e-10);
        assert_close(&r.reconstruct(), &m, 1e-12);
    }

    #[test]
    fn svd_zero_matrix() {
        let r = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        assert_close(&r.u.t_matmul(&r.u), &Matrix::identity(2), 1e-12);
    }

    #[test]
    fn svd_is_deterministic() {
        let m = random_matrix(9, 6, 3);
        let a = svd(&m).unwrap();
        let b = svd(&m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eig_sym_examples() {
        let (w, _) = eig_sym(&Matrix::identity(2)).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);

        let (w, v) = eig_sym(&Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[(0, 0)].abs() - h).abs() < 1e-14);
        assert!((v[(0, 0)] - v[(1, 0)]).abs() < 1e-14);
        assert!((v[(0, 1)] + v[(1, 1)]).abs() < 1e-14);

        let vec = [1.0, 2.0, -2.0];
        let outer = Matrix::from_fn(3, 3, |i, j| vec[i] * vec[j]);
        let (w, _) = eig_sym(&outer).unwrap();
        assert!((w[0] - 9.0).abs() < 1e-12);
        assert!(w[1].abs() < 1e-12 && w[2].abs() < 1e-12);
    }

    #[test]
    fn eig_sym_rejects_asymmetric() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(eig_sym(&m), Err(LinalgError::NotSymmetric { .. })));
        assert!(matches!(
            eig_sym(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn inv_sqrt_examples() {
        assert_close(&inv_sqrt_psd(&Matrix::identity(4), 0.0).unwrap(), &Matrix::identity(4), 1e-15);
        let r = inv_sqrt_psd(&Matrix::from_diag(&[4.0, 9.0]), 0.0).unwrap();
        assert_close(&r, &Matrix::from_diag(&[0.5, 1.0 / 3.0]), 1e-15);

        let r = inv_sqrt_psd(&Matrix::from_diag(&[1.0, 1e-14]), 1e-3).unwrap();
        let expect = Matrix::from_diag(&[(1.0f64 + 1e-3).powf(-0.5), (1e-14f64 + 1e-3).powf(-0.5)]);
        assert_close(&r, &expect, 1e-12);
    }

    #[test]
    fn inv_sqrt_whitens() {
        let x = random_matrix(4, 50, 9);
        let c = x.matmul_t(&x).scale(1.0 / 50.0);
        let r = inv_sqrt_psd(&c, 0.0).unwrap();
        assert_close(&r.matmul(&c).matmul(&r), &Matrix::identity(4), 1e-6);
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let m = Matrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(inv_sqrt_psd(&m, 0.0), Err(LinalgError::NotPsd { .. })));
    }

    #[test]
    fn inv_sqrt_clamps_null_modes() {
        let d = inv_sqrt_psd_detailed(&Matrix::from_diag(&[2.0, 0.0]), 0.0).unwrap();
        assert_eq!(d.clamped, 1);
        assert_eq!(d.matrix[(1, 1)], 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn svd_reconstructs(rows in 1usize..50, cols in 1usize..50, seed in any::<u64>()) {
                let m = random_matrix(rows, cols, seed);
                let r = svd(&m).unwrap();
                let rel = r.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm().max(1e-300);
                prop_assert!(rel < 1e-8, "rel err {rel:e}");
                prop_assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(r.s.iter().all(|&s| s >= 0.0));
                let k = rows.min(cols);
                let utu = r.u.t_matmul(&r.u).sub(&Matrix::identity(k)).max_abs();
                let vvt = r.vt.matmul_t(&r.vt).sub(&Matrix::identity(k)).max_abs();
                prop_assert!(utu < 1e-10 && vvt < 1e-10, "{utu:e} {vvt:e}");
            }

            #[test]
            fn singular_values_are_root_gram_eigenvalues(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
                let m = random_matrix(rows, cols, seed);
                let r = svd(&m).unwrap();
                let (w, _) = eig_sym(&m.t_matmul(&m)).unwrap();
                for (s, w) in r.s.iter().zip(&w) {
                    prop_assert!((s - w.max(0.0).sqrt()).abs() < 1e-8);
                }
            }

            #[test]
            fn eig_sym_reconstructs(n in 1usize..20, seed in any::<u64>()) {
                let x = random_matrix(n, n, seed);
                let m = x.add(&x.transpose());
                let (w, v) = eig_sym(&m).unwrap();
                prop_assert!(spectral_apply(&v, &w).sub(&m).max_abs() < 1e-8);
                prop_assert!(v.t_matmul(&v).sub(&Matrix::identity(n)).max_abs() < 1e-10);
            }
        }
    }
}
