//! Classical comparison portfolios: Markowitz with sample or shrunk
//! covariance, and equal weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_sum, Matrix, SpdMatrix, Vector};

/// Sample mean and covariance of a returns matrix (one observation per row).
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub mu_hat: Vector,
    /// Symmetric positive semi-definite; may be singular when `n ≤ d`.
    pub sigma_hat: Matrix,
    pub n: usize,
}

impl MomentEstimates {
    /// `unbiased` selects the `1/(n−1)` normalizer instead of `1/n`.
    pub fn from_returns(y: &Matrix, unbiased: bool) -> Result<Self> {
        check_rows(y, 2)?;
        Ok(Self {
            mu_hat: row_sum(y) / y.nrows() as f64,
            sigma_hat: sample_covariance(y, unbiased),
            n: y.nrows(),
        })
    }
}

fn check_rows(y: &Matrix, min: usize) -> Result<()> {
    if y.ncols() == 0 {
        return Err(Error::InsufficientData("no asset columns".into()));
    }
    if y.nrows() < min {
        return Err(Error::InsufficientData(format!(
            "need at least {min} observations, got {}",
            y.nrows()
        )));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite return".into()));
    }
    Ok(())
}

fn centered(y: &Matrix) -> Matrix {
    let mean = row_sum(y) / y.nrows() as f64;
    Matrix::from_fn(y.nrows(), y.ncols(), |t, j| y[(t, j)] - mean[j])
}

/// Sample covariance with the `1/n` normalizer, or `1/(n−1)` if `unbiased`.
pub fn sample_covariance(y: &Matrix, unbiased: bool) -> Matrix {
    let c = centered(y);
    let denom = if unbiased { y.nrows() - 1 } else { y.nrows() } as f64;
    crate::linalg::symmetrize(&(c.transpose() * c / denom))
}

/// Unconstrained Markowitz portfolio `(1/λ) Σ̂⁻¹ μ̂`.
pub fn markowitz(est: &MomentEstimates, lambda: f64) -> Result<Vector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion must be positive, got {lambda}"
        )));
    }
    let sigma = SpdMatrix::named(est.sigma_hat.clone(), "sample covariance").map_err(|_| {
        Error::Singular("sample covariance is not invertible; consider Ledoit-Wolf shrinkage".into())
    })?;
    Ok(sigma.solve_vec(&est.mu_hat) / lambda)
}

/// Markowitz portfolio with a supplied covariance.
pub fn markowitz_with_covariance(mu: &Vector, sigma: &SpdMatrix, lambda: f64) -> Result<Vector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion must be positive, got {lambda}"
        )));
    }
    Ok(sigma.solve_vec(mu) / lambda)
}

/// Shrinkage target for Ledoit–Wolf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkageTarget {
    /// `m I` with `m` the mean of the sample variances.
    #[default]
    ScaledIdentity,
    /// Plain `I`.
    Identity,
}

#[derive(Debug, Clone)]
pub struct LedoitWolf {
    pub covariance: SpdMatrix,
    pub alpha: f64,
}

fn target_matrix(sample: &Matrix, target: ShrinkageTarget) -> Matrix {
    let d = sample.nrows();
    match target {
        ShrinkageTarget::ScaledIdentity => Matrix::identity(d, d) * (sample.trace() / d as f64),
        ShrinkageTarget::Identity => Matrix::identity(d, d),
    }
}

/// Ledoit–Wolf shrinkage `(1 − α) Σ̂ + α T` of the `1/n` sample covariance.
///
/// `α = min(b̄², ‖Σ̂ − T‖²) / ‖Σ̂ − T‖²` with
/// `b̄² = n⁻² Σ_t ‖x_t x_tᵀ − Σ̂‖²` over the centered observations `x_t`.
pub fn ledoit_wolf(y: &Matrix, target: ShrinkageTarget) -> Result<LedoitWolf> {
    check_rows(y, 2)?;
    let sample = sample_covariance(y, false);
    let t = target_matrix(&sample, target);
    let dist = (&sample - &t).norm_squared();
    let alpha = if dist == 0.0 {
        1.0
    } else {
        let c = centered(y);
        let n = y.nrows() as f64;
        let b_bar: f64 = c
            .row_iter()
            .map(|x| (x.transpose() * x - &sample).norm_squared())
            .sum::<f64>()
            / (n * n);
        b_bar.min(dist) / dist
    };
    // With n ≤ d the rank-one deviations can vanish (always at n = 2), giving
    // α = 0 on a singular sample covariance. Floor α at 1/n in that regime.
    let alpha = if y.nrows() <= y.ncols() {
        alpha.max(1.0 / y.nrows() as f64)
    } else {
        alpha
    };
    shrink(sample, t, alpha)
}

/// Shrinkage with a caller-chosen `α ∈ [0, 1]`.
pub fn ledoit_wolf_with_alpha(y: &Matrix, target: ShrinkageTarget, alpha: f64) -> Result<LedoitWolf> {
    check_rows(y, 2)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage weight {alpha} outside [0, 1]"
        )));
    }
    let sample = sample_covariance(y, false);
    let t = target_matrix(&sample, target);
    shrink(sample, t, alpha)
}

fn shrink(sample: Matrix, target: Matrix, alpha: f64) -> Result<LedoitWolf> {
    let mixed = if alpha == 0.0 {
        sample
    } else if alpha == 1.0 {
        target
    } else {
        sample * (1.0 - alpha) + target * alpha
    };
    let covariance = SpdMatrix::named(mixed, "shrunk covariance")
        .map_err(|_| Error::Singular("shrunk covariance (no shrinkage and singular data)".into()))?;
    Ok(LedoitWolf { covariance, alpha })
}

/// The uniform portfolio `(1/d) 1_d`.
pub fn equal_weights(d: usize) -> Vector {
    Vector::from_element(d, 1.0 / d as f64)
}
