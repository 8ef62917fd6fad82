//! Small dense linear algebra layer.
//!
//! Matrices here are at most a few hundred rows (one row per data bin), so
//! everything is plain row-major `Vec<f64>` storage with textbook algorithms:
//! Cholesky for solves and quadratic forms, cyclic Jacobi for symmetric
//! eigendecompositions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use libm::{fabs, sqrt};

use crate::error::{Error, Result};

/// Relative tolerance used when validating symmetry of user-supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Build from a row-major slice.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Column vectors side by side.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, c);
        }
        m
    }

    /// Number of rows.
    pub fn nrows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// `true` for square matrices.
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Nested row vectors (serialisation helper).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Overwrite column `j`.
    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Diagonal entries.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// All entries finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Transpose.
    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix product. Panics on inner dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self + rhs`.
    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// `self - rhs`.
    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Multiply every entry by `s`.
    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        sqrt(self.data.iter().map(|a| a * a).sum())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(fabs(*a)))
    }

    /// Copy of the sub-matrix starting at `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Matrix {
        let mut m = Matrix::zeros(nr, nc);
        for i in 0..nr {
            for j in 0..nc {
                m[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        m
    }

    /// Write `block` into `self` at `(r0, c0)`.
    pub fn set_submatrix(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// Block-diagonal matrix assembled from square blocks.
    pub fn block_diagonal(blocks: &[Matrix]) -> Matrix {
        let n: usize = blocks.iter().map(Matrix::nrows).sum();
        let mut m = Matrix::zeros(n, n);
        let mut off = 0;
        for b in blocks {
            m.set_submatrix(off, off, b);
            off += b.nrows();
        }
        m
    }

    /// Largest relative deviation from symmetry, `max |a_ij - a_ji| / max |a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(fabs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst / scale
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Relative Frobenius distance `‖self - other‖ / max(‖other‖, 1)`.
    pub fn rel_distance(&self, other: &Matrix) -> f64 {
        self.sub(other).frobenius_norm() / other.frobenius_norm().max(1.0)
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

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A square matrix that is exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(Matrix);

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the order of `values`.
    pub vectors: Matrix,
}

impl SymmetricMatrix {
    /// Validate symmetry within [`SYMMETRY_TOL`] (relative) and symmetrise.
    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, SYMMETRY_TOL)
    }

    /// Validate symmetry within `tol` (relative to the largest entry) and symmetrise.
    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::shape(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let asym = m.asymmetry();
        if asym > tol {
            return Err(Error::validation(format!(
                "matrix is not symmetric (relative asymmetry {asym:e})"
            )));
        }
        Ok(SymmetricMatrix(m.symmetrized()))
    }

    /// Symmetrise without validation. Used for matrices that are symmetric by
    /// construction up to round-off.
    pub fn from_symmetrized(m: &Matrix) -> Self {
        assert!(m.is_square());
        SymmetricMatrix(m.symmetrized())
    }

    /// Identity.
    pub fn identity(n: usize) -> Self {
        SymmetricMatrix(Matrix::identity(n))
    }

    /// Diagonal matrix.
    pub fn from_diagonal(d: &[f64]) -> Self {
        SymmetricMatrix(Matrix::from_diagonal(d))
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Underlying dense matrix.
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// Consume into the dense matrix.
    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Eigendecomposition by cyclic Jacobi rotations.
    pub fn eigen(&self) -> Result<SymmetricEigen> {
        jacobi_eigen(&self.0)
    }

    /// Cholesky factorisation; `context` names the matrix in error messages.
    pub fn cholesky(&self, context: &str) -> Result<Cholesky> {
        Cholesky::new(&self.0, context)
    }

    /// Rebuild `V f(Λ) Vᵀ` from an eigendecomposition.
    fn spectral_map(eig: &SymmetricEigen, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let n = eig.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in eig.values.iter().enumerate() {
            let fl = f(lam);
            for i in 0..n {
                let vi = eig.vectors[(i, k)] * fl;
                if vi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += vi * eig.vectors[(j, k)];
                }
            }
        }
        SymmetricMatrix::from_symmetrized(&out)
    }

    fn require_pd(&self, eig: &SymmetricEigen, context: &str) -> Result<()> {
        let n = self.dim() as f64;
        let max = eig.values.first().copied().unwrap_or(0.0);
        let min = eig.values.last().copied().unwrap_or(0.0);
        if !(max > 0.0) || min <= n * f64::EPSILON * max {
            return Err(Error::NotPositiveDefinite {
                context: String::from(context),
                eigenvalue: min,
            });
        }
        Ok(())
    }

    /// Symmetric inverse square root `S^{-1/2}`.
    pub fn sqrt_inv(&self) -> Result<SymmetricMatrix> {
        let eig = self.eigen()?;
        self.require_pd(&eig, "matrix")?;
        Ok(Self::spectral_map(&eig, |l| 1.0 / sqrt(l)))
    }

    /// Symmetric square root of a positive definite matrix.
    pub fn sqrt(&self) -> Result<SymmetricMatrix> {
        let eig = self.eigen()?;
        self.require_pd(&eig, "matrix")?;
        Ok(Self::spectral_map(&eig, sqrt))
    }

    /// Both `S^{1/2}` and `S^{-1/2}` from a single decomposition.
    pub fn sqrt_pair(&self, context: &str) -> Result<(SymmetricMatrix, SymmetricMatrix)> {
        let eig = self.eigen()?;
        self.require_pd(&eig, context)?;
        Ok((
            Self::spectral_map(&eig, sqrt),
            Self::spectral_map(&eig, |l| 1.0 / sqrt(l)),
        ))
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigen()?.values.last().expect("non-empty"))
    }
}

/// Symmetric eigendecomposition: values descending, vectors orthonormal columns.
pub fn eigen_sym(s: &SymmetricMatrix) -> Result<SymmetricEigen> {
    s.eigen()
}

/// Symmetric inverse square root.
pub fn sym_sqrt_inv(s: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    s.sqrt_inv()
}

fn jacobi_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    if !m.is_finite() {
        return Err(Error::domain("eigendecomposition of a matrix with non-finite entries"));
    }
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Ok(SymmetricEigen {
            values: vec![0.0; n],
            vectors: v,
        });
    }
    let target = (norm * 1e-17) * (norm * 1e-17);

    let mut converged = false;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if fabs(apq) <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (fabs(theta) + sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                // A <- A J
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                // A <- Jᵀ A
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
    if !converged {
        return Err(Error::numeric("Jacobi eigendecomposition did not converge"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal eigenvalues in index order, so results are deterministic.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower-triangular Cholesky factor `S = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorise a symmetric positive definite matrix.
    pub fn new(s: &Matrix, context: &str) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::shape(format!("{context}: Cholesky of non-square matrix")));
        }
        if !s.is_finite() {
            return Err(Error::domain(format!("{context}: non-finite entries")));
        }
        let n = s.nrows();
        let scale = s.diagonal().iter().fold(0.0f64, |m, d| m.max(fabs(*d)));
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = s[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > (n as f64) * f64::EPSILON * scale) {
                return Err(Error::NotPositiveDefinite {
                    context: String::from(context),
                    eigenvalue: d,
                });
            }
            let ljj = sqrt(d);
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut x = s[(i, j)];
                for k in 0..j {
                    x -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = x / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    /// The factor `L`.
    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    /// Solve `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        let mut y = b.to_vec();
        for i in 0..n {
            let dotp: f64 = (0..i).map(|k| self.l[(i, k)] * y[k]).sum();
            y[i] = (y[i] - dotp) / self.l[(i, i)];
        }
        y
    }

    /// Solve `Lᵀ x = y`.
    pub fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let dotp: f64 = ((i + 1)..n).map(|k| self.l[(k, i)] * x[k]).sum();
            x[i] = (x[i] - dotp) / self.l[(i, i)];
        }
        x
    }

    /// Solve `S x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// Solve `S X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let cols: Vec<Vec<f64>> = (0..b.ncols()).map(|j| self.solve(&b.column(j))).collect();
        Matrix::from_columns(b.nrows(), &cols)
    }

    /// Quadratic form `bᵀ S⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|y| y * y).sum()
    }

    /// `S⁻¹`.
    pub fn inverse(&self) -> SymmetricMatrix {
        let n = self.l.nrows();
        SymmetricMatrix::from_symmetrized(&self.solve_matrix(&Matrix::identity(n)))
    }
}
