//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance used when checking symmetry.
const SYMMETRY_TOL: f64 = 1e-10;

/// Jitter added to kernel Gram matrices.
pub const KERNEL_JITTER: f64 = 1e-8;

/// A symmetric positive-definite matrix together with its Cholesky factor.
///
/// Construction validates symmetry (to `1e-10` relative) and positive
/// definiteness (by a successful Cholesky factorization). The stored matrix is
/// exactly symmetric.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: Matrix,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl SpdMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        Self::named(matrix, "matrix")
    }

    /// Like [`SpdMatrix::new`] but names the matrix in the error message.
    pub fn named(matrix: Matrix, name: &str) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension {
                context: "SpdMatrix (square)",
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidParameter(format!("{name} is empty")));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
        }
        let scale = matrix.amax().max(1.0);
        if max_abs_diff(&matrix, &matrix.transpose()) > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
        }
        let matrix = symmetrize(&matrix);
        let chol =
            Cholesky::new(matrix.clone()).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))?;
        Ok(Self { matrix, chol })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(Matrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn scaled_identity(d: usize, scale: f64) -> Result<Self> {
        Self::new(Matrix::identity(d, d) * scale)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    /// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
    pub fn cholesky_l(&self) -> Matrix {
        self.chol.l()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let inv = symmetrize(&self.chol.inverse());
        // The inverse of an SPD matrix is SPD; re-factorize for its own use.
        let chol = Cholesky::new(inv.clone()).expect("inverse of SPD matrix is SPD");
        SpdMatrix { matrix: inv, chol }
    }

    pub fn inverse_matrix(&self) -> Matrix {
        symmetrize(&self.chol.inverse())
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    pub fn scale(&self, factor: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(&self.matrix * factor)
    }
}

/// Returns `(a + aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `a bᵀ + b aᵀ`.
pub fn sym_outer(a: &Vector, b: &Vector) -> Matrix {
    let ab = a * b.transpose();
    &ab + ab.transpose()
}

/// Kronecker product; block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec(a: &Matrix) -> Vector {
    // nalgebra stores matrices column-major.
    Vector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::Dimension {
            context: "unvec",
            expected: rows * cols,
            found: v.len(),
        });
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Radial basis function kernel `exp(-(t1 - t2)² / (2γ²))`.
pub fn rbf_kernel(t1: f64, t2: f64, gamma: f64) -> f64 {
    let diff = t1 - t2;
    (-diff * diff / (2.0 * gamma * gamma)).exp()
}

/// RBF Gram matrix over `times`, with [`KERNEL_JITTER`] added to the diagonal.
pub fn rbf_gram(times: &[f64], gamma: f64) -> Result<SpdMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kernel width must be positive, got {gamma}"
        )));
    }
    if times.is_empty() {
        return Err(Error::InvalidParameter("no kernel time points".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("non-finite kernel time point".into()));
    }
    let m = times.len();
    let gram = Matrix::from_fn(m, m, |i, j| {
        rbf_kernel(times[i], times[j], gamma) + if i == j { KERNEL_JITTER } else { 0.0 }
    });
    SpdMatrix::named(gram, "RBF Gram matrix")
}

/// Sum of `row_i row_iᵀ` over the rows of `y`.
pub fn gram_of_rows(y: &Matrix) -> Matrix {
    y.transpose() * y
}

/// Sum of the rows of `y` as a column vector.
pub fn row_sum(y: &Matrix) -> Vector {
    y.row_sum().transpose()
}

pub fn row(y: &Matrix, t: usize) -> Vector {
    y.row(t).transpose()
}
