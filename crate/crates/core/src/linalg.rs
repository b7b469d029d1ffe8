//! Dense real linear algebra for the small (≤ 200×200) matrices used by the
//! whitening transforms and the 2D theory checks.
//!
//! Storage is row-major `Vec<f64>`. Symmetric eigendecomposition uses cyclic
//! Jacobi rotations, which is plenty at these sizes and keeps the crate free
//! of a LAPACK dependency.

use std::ops::{Index, IndexMut};

use crate::error::{shape_err, Error, Result};

/// Threshold below which the smallest eigenvalue triggers regularization.
pub const SPD_THRESHOLD: f64 = 1e-16;

const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PINV_REL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(shape_err(ncols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols: ncols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(
                format!("{} rows", self.cols),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(shape_err(self.cols, v.len()));
        }
        Ok((0..self.rows)
            .map(|i| dot(self.row(i), v))
            .collect())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape_err(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.add(&other.scale(-1.0))
    }

    /// Left-multiplies by `diag(d)`: scales row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Matrix {
        let mut out = self.clone();
        for (i, &s) in d.iter().enumerate().take(self.rows) {
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        out
    }

    /// Right-multiplies by `diag(d)`: scales column `j` by `d[j]`.
    pub fn scale_cols(&self, d: &[f64]) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &s) in out.row_mut(i).iter_mut().zip(d) {
                *x *= s;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest entrywise absolute difference (the ∞-norm used in tolerances).
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_lower_triangular(&self, tol: f64) -> bool {
        (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self[(i, j)].abs() <= tol))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Selects the given rows and columns (in order) into a new matrix.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        Matrix::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A square matrix whose entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Accepts `m` only if it is square, non-empty and exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_symmetric(0.0) {
            return Err(Error::InvalidInput("matrix is not symmetric".into()));
        }
        Ok(Self(m))
    }

    /// Averages `m` with its transpose.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(shape_err("square non-empty", format!("{}x{}", m.rows(), m.cols())));
        }
        let n = m.rows();
        let mut out = m.clone();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(Self(out))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self(Matrix::from_diag(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diag().iter().sum()
    }

    pub fn shifted(&self, delta: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows() {
            m[(i, i)] += delta;
        }
        SymMatrix(m)
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// `U diag(f(λ)) Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let scaled: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let us = self.vectors.scale_cols(&scaled);
        us.matmul(&self.vectors.transpose())
            .expect("eigenvector matrix is square")
    }

    pub fn min_value(&self) -> f64 {
        *self.values.last().expect("non-empty decomposition")
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal Frobenius norm drops below `1e-12·‖M‖_F`.
/// Eigenvalues come back in descending order; ties keep their first
/// occurrence on the diagonal.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.matrix().is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = m.dim();
    let mut a = m.matrix().clone();
    let mut v = Matrix::identity(n);
    let target = JACOBI_REL_TOL * a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

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

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps first occurrence first on ties
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigenDecomposition { values, vectors })
}

/// `M^{-1/2}` for a symmetric positive definite `M`.
pub fn inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(m)?;
    let min = eig.min_value();
    if min <= 0.0 {
        return Err(Error::NotSpd(min));
    }
    SymMatrix::symmetrize(&eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix> {
    let n = m.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotSpd(d));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn invert_lower_triangular(l: &Matrix) -> Result<Matrix> {
    if !l.is_square() {
        return Err(shape_err("square", format!("{}x{}", l.rows(), l.cols())));
    }
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            let d = l[(i, i)];
            if d == 0.0 {
                return Err(Error::NotSpd(0.0));
            }
            inv[(i, col)] = s / d;
        }
    }
    Ok(inv)
}

/// Solves `M x = b` for SPD `M` via Cholesky.
pub fn solve_spd(m: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    if b.len() != n {
        return Err(shape_err(n, b.len()));
    }
    let l = cholesky(m)?;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Regularization shift that would be applied to `m`, if any.
///
/// When the smallest eigenvalue is below [`SPD_THRESHOLD`] the diagonal is
/// raised by `|λ_min| + 1e-12·max(1, trace/dim)`.
pub fn regularization_shift(m: &SymMatrix) -> Result<Option<f64>> {
    let eig = sym_eig(m)?;
    let min = eig.min_value();
    if min < SPD_THRESHOLD {
        let pad = 1e-12 * f64::max(1.0, m.trace() / m.dim() as f64);
        Ok(Some(min.abs() + pad))
    } else {
        Ok(None)
    }
}

pub fn regularize_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(match regularization_shift(m)? {
        Some(delta) => {
            log::warn!(
                "covariance regularized: diagonal shifted by {delta:e} (dim {})",
                m.dim()
            );
            m.shifted(delta)
        }
        None => m.clone(),
    })
}

/// Moore–Penrose pseudo-inverse via the eigendecomposition of `AᵀA`.
///
/// Singular values below `1e-12·σ_max` are treated as zero.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(Matrix::zeros(a.cols(), a.rows()));
    }
    let at = a.transpose();
    let ata = SymMatrix::symmetrize(&at.matmul(a)?)?;
    let eig = sym_eig(&ata)?;
    let sigma_max = eig.values[0].max(0.0).sqrt();
    let cutoff = PINV_REL_CUTOFF * sigma_max;
    let inv_sq: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            let s = l.max(0.0).sqrt();
            if s > cutoff && s > 0.0 {
                1.0 / l
            } else {
                0.0
            }
        })
        .collect();
    let v = &eig.vectors;
    v.scale_cols(&inv_sq).matmul(&v.transpose())?.matmul(&at)
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix from its own
/// eigendecomposition (cutoff relative to the largest eigenvalue).
pub fn pseudo_inverse_psd(m: &SymMatrix) -> Result<Matrix> {
    let eig = sym_eig(m)?;
    let lmax = eig.values[0].abs();
    let cutoff = PINV_REL_CUTOFF * lmax;
    Ok(eig.reconstruct_with(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 }))
}

/// Unbiased (N−1) sample covariance and column means of an `N × D` matrix.
pub fn covariance(data: &Matrix) -> Result<(SymMatrix, Vec<f64>)> {
    let n = data.rows();
    let d = data.cols();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 samples for a covariance, got {n}"
        )));
    }
    if !data.is_finite() {
        return Err(Error::InvalidInput("data has non-finite entries".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for ((c, x), m) in centered.iter_mut().zip(data.row(i)).zip(&mean) {
            *c = x - m;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            let row = cov.row_mut(a);
            for b in a..d {
                row[b] += ca * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((SymMatrix(cov), mean))
}
