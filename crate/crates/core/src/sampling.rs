//! Seeded random sampling: multivariate normal, Wishart (Bartlett) and
//! matrix-normal draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdMatrix, Vector};

/// Seed for every random stream in the crate. Equal seeds give bit-identical
/// sample streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent sub-stream `stream` of this seed (stream 0 equals [`RngSeed::rng`]).
    pub fn rng_stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_stream(stream);
        rng
    }

    /// Seed for the `index`-th independent worker or repetition.
    pub fn derive(self, index: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(index))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(mean, L Lᵀ)` given the lower Cholesky factor `L`.
pub fn sample_mvn_chol<R: Rng + ?Sized>(mean: &Vector, chol_l: &Matrix, rng: &mut R) -> Vector {
    mean + chol_l * standard_normal_vector(mean.len(), rng)
}

/// Draw from `N(mean, P⁻¹)` given the precision `P` (solves against its
/// Cholesky factor instead of inverting it).
pub fn sample_mvn_precision<R: Rng + ?Sized>(mean: &Vector, precision: &SpdMatrix, rng: &mut R) -> Vector {
    let z = standard_normal_vector(mean.len(), rng);
    let l = precision.cholesky_l();
    let x = l
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    mean + x
}

/// Wishart draw with `nu` degrees of freedom and scale `psi` (mean `nu·psi`),
/// via the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(nu: f64, psi: &SpdMatrix, rng: &mut R) -> Result<SpdMatrix> {
    let d = psi.dim();
    if !(nu > d as f64 - 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Wishart degrees of freedom {nu} must exceed d - 1 = {}",
            d - 1
        )));
    }
    let l = psi.cholesky_l();
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|e| Error::InvalidParameter(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = &l * a;
    SpdMatrix::named(&la * la.transpose(), "Wishart draw")
}

/// Matrix-normal draw `X` with `vec(X) ~ N(vec(M), V ⊗ U)`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(
    m: &Matrix,
    u: &SpdMatrix,
    v: &SpdMatrix,
    rng: &mut R,
) -> Result<Matrix> {
    if u.dim() != m.nrows() {
        return Err(Error::Dimension {
            context: "matrix normal row covariance",
            expected: m.nrows(),
            found: u.dim(),
        });
    }
    if v.dim() != m.ncols() {
        return Err(Error::Dimension {
            context: "matrix normal column covariance",
            expected: m.ncols(),
            found: v.dim(),
        });
    }
    let z = Matrix::from_fn(m.nrows(), m.ncols(), |_, _| rng.sample(StandardNormal));
    Ok(m + u.cholesky_l() * z * v.cholesky_l().transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_streams_are_identical() {
        let psi = SpdMatrix::identity(3);
        let a = sample_wishart(5.0, &psi, &mut RngSeed(7).rng()).unwrap();
        let b = sample_wishart(5.0, &psi, &mut RngSeed(7).rng()).unwrap();
        assert_eq!(a.as_matrix(), b.as_matrix());
    }

    #[test]
    fn wishart_rejects_small_dof() {
        let psi = SpdMatrix::identity(3);
        assert!(sample_wishart(1.5, &psi, &mut RngSeed(1).rng()).is_err());
    }

    #[test]
    fn every_wishart_draw_is_pd() {
        let psi = SpdMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0])).unwrap();
        let mut rng = RngSeed(3).rng();
        for _ in 0..2000 {
            // SpdMatrix construction already runs a Cholesky factorization.
            sample_wishart(2.0, &psi, &mut rng).unwrap();
        }
    }

    #[test]
    fn matrix_normal_checks_dims() {
        let m = Matrix::zeros(2, 3);
        let u = SpdMatrix::identity(3);
        let v = SpdMatrix::identity(3);
        assert!(sample_matrix_normal(&m, &u, &v, &mut RngSeed(1).rng()).is_err());
    }
}
