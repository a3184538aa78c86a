//! Dense kernels for small symmetric systems: Cholesky, Jacobi eigenvalues,
//! and SPD solves. Everything here targets matrices of dimension 32 or less.

use thiserror::Error;

/// Pivot threshold below which a Cholesky factorization is rejected.
const PIVOT_TOL: f64 = 1e-12;

/// Sweep budget for the cyclic Jacobi eigenvalue iteration.
const MAX_JACOBI_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    /// A Cholesky pivot fell at or below the tolerance; the matrix is not
    /// positive definite to working precision.
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    /// The Jacobi iteration failed to reduce the off-diagonal mass within
    /// its sweep budget.
    #[error("eigenvalue iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            assert_eq!(row.len(), cols, "all rows must have the same length");
            data.extend_from_slice(row);
        }
        Matrix { rows: n, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, vals: &[f64]) {
        assert_eq!(vals.len(), self.rows, "column length must match row count");
        for (i, &v) in vals.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "vector length must match column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Dense symmetric matrix. Entries `(i, j)` and `(j, i)` are identical by
/// construction: every constructor writes each unordered pair once.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a symmetric matrix by evaluating `f(i, j)` for `i >= j` and
    /// mirroring the result across the diagonal.
    pub fn from_lower(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Builds from full rows. Panics unless the input is square and exactly
    /// symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "matrix must be square");
            for j in 0..=i {
                assert!(
                    row[j] == rows[j][i],
                    "matrix must be symmetric: ({i},{j}) != ({j},{i})"
                );
            }
        }
        SymMatrix::from_lower(dim, |i, j| rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.dim, cols: self.dim, data: self.data.clone() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entrywise `self + t * other`.
    pub fn add_scaled(&self, other: &SymMatrix, t: f64) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "dimensions must agree");
        SymMatrix::from_lower(self.dim, |i, j| self.get(i, j) + t * other.get(i, j))
    }
}

/// Lower-triangular Cholesky factor `L` with `L * L^T` equal to the input.
#[derive(Debug, Clone)]
pub struct CholFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.lower[i * self.dim + j]
        }
    }

    /// Solves `L L^T x = b` by forward then backward substitution.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(b.len(), n, "right-hand side length must match dimension");
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lower[k * n + i] * x[k];
            }
            x[i] = s / self.lower[i * n + i];
        }
        x
    }

    /// Solves `L L^T X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows(), self.dim, "right-hand side rows must match dimension");
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            out.set_column(j, &self.solve_vec(&b.column(j)));
        }
        out
    }

    /// Computes `L z`, the map sending standard normals to draws with the
    /// factored covariance.
    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(z.len(), n, "vector length must match dimension");
        (0..n)
            .map(|i| (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum())
            .collect()
    }

    /// Rebuilds `L * L^T`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_lower(n, |i, j| {
            (0..=j.min(i)).map(|k| self.lower[i * n + k] * self.lower[j * n + k]).sum()
        })
    }

    /// Returns the factor as a dense lower-triangular matrix.
    pub fn to_matrix(&self) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                out.set(i, j, self.lower[i * self.dim + j]);
            }
        }
        out
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Fails with [`NumericsError::NotPositiveDefinite`] when a pivot drops to
/// `1e-12` or below.
pub fn cholesky(m: &SymMatrix) -> Result<CholFactor, NumericsError> {
    let n = m.dim();
    let mut lower = vec![0.0; n * n];
    for j in 0..n {
        let mut s = m.get(j, j);
        for k in 0..j {
            s -= lower[j * n + k] * lower[j * n + k];
        }
        if s <= PIVOT_TOL {
            return Err(NumericsError::NotPositiveDefinite { column: j, pivot: s });
        }
        let d = s.sqrt();
        lower[j * n + j] = d;
        for i in j + 1..n {
            let mut v = m.get(i, j);
            for k in 0..j {
                v -= lower[i * n + k] * lower[j * n + k];
            }
            lower[i * n + j] = v / d;
        }
    }
    Ok(CholFactor { dim: n, lower })
}

/// All eigenvalues of a symmetric matrix, ascending, via cyclic Jacobi
/// rotations. Accurate to about `1e-9` absolutely for the matrix scales this
/// crate works with.
pub fn sym_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>, NumericsError> {
    let n = m.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![m.get(0, 0)]);
    }
    let mut a: Vec<f64> = (0..n * n).map(|k| m.get(k / n, k % n)).collect();
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let stop = scale * 1e-14;

    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (2.0 * off).sqrt() <= stop {
            let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
            eigs.sort_by(f64::total_cmp);
            return Ok(eigs);
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= stop / (n as f64 * 10.0) {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(NumericsError::NoConvergence(MAX_JACOBI_SWEEPS))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64, NumericsError> {
    let eigs = sym_eigenvalues(m)?;
    Ok(eigs.first().copied().unwrap_or(0.0))
}

/// Solves `m * X = rhs` for symmetric positive definite `m` via Cholesky.
pub fn solve_spd(m: &SymMatrix, rhs: &Matrix) -> Result<Matrix, NumericsError> {
    Ok(cholesky(m)?.solve_matrix(rhs))
}
