//! Data-driven default hyperparameters: `ν₀ = d`, `ψ₀ = Σ̂⁻¹/ν₀`, empirical
//! prior means, and the RBF width chosen by marginal likelihood.

use crate::baselines::{ledoit_wolf, sample_covariance, ShrinkageTarget};
use crate::error::{Error, Result};
use crate::linalg::{rbf_gram, row_sum, Matrix, SpdMatrix, Vector};
use crate::models::asymptotic::least_squares_transition;
use crate::models::{check_observations, ArPrior, GgPrior, GpPrior, GwPrior, MeanFunction};

/// Sample covariance (`1/n`), or its Ledoit–Wolf shrinkage when the sample
/// covariance is not invertible.
fn covariance_estimate(y: &Matrix) -> Result<SpdMatrix> {
    check_observations(y, 2, "covariance estimate")?;
    let sample = sample_covariance(y, false);
    match SpdMatrix::named(sample, "sample covariance") {
        Ok(s) => Ok(s),
        Err(_) => {
            log::warn!("sample covariance is singular; using Ledoit-Wolf shrinkage for the prior scale");
            Ok(ledoit_wolf(y, ShrinkageTarget::ScaledIdentity)?.covariance)
        }
    }
}

/// `(ν₀, ψ₀) = (d, Σ̂⁻¹ / d)`.
pub fn default_wishart_prior(y: &Matrix) -> Result<(f64, SpdMatrix)> {
    let sigma = covariance_estimate(y)?;
    let nu0 = y.ncols() as f64;
    let psi0 = SpdMatrix::named(sigma.inverse_matrix() / nu0, "ψ₀")?;
    Ok((nu0, psi0))
}

impl GwPrior {
    /// `μ₀ = μ̂`, `Λ₀ = I` and the default Wishart prior.
    pub fn from_data(y: &Matrix) -> Result<Self> {
        let (nu0, psi0) = default_wishart_prior(y)?;
        Ok(Self {
            mu0: row_sum(y) / y.nrows() as f64,
            lambda0: SpdMatrix::identity(y.ncols()),
            nu0,
            psi0,
        })
    }
}

impl ArPrior {
    /// `M₀` is the least-squares transition (zero if the lagged Gram matrix is
    /// singular), `U₀ = V₀ = I`, and the default Wishart prior on the targets.
    pub fn from_data(y: &Matrix) -> Result<Self> {
        check_observations(y, 3, "AR prior")?;
        let d = y.ncols();
        let m0 = match least_squares_transition(y) {
            Ok((m, _)) => m,
            Err(Error::Singular(_)) => Matrix::zeros(d, d),
            Err(e) => return Err(e),
        };
        let (nu0, psi0) = default_wishart_prior(&y.rows(1, y.nrows() - 1).into_owned())?;
        Ok(Self {
            m0,
            u0: SpdMatrix::identity(d),
            v0: SpdMatrix::identity(d),
            nu0,
            psi0,
        })
    }
}

impl GpPrior {
    /// Zero mean function, `Ω₀ = I`, the given width and the default Wishart prior.
    pub fn from_data(y: &Matrix, gamma: f64) -> Result<Self> {
        let (nu0, psi0) = default_wishart_prior(y)?;
        Ok(Self {
            mean_fn: MeanFunction::Zero,
            gamma,
            omega0: SpdMatrix::identity(y.ncols()),
            nu0,
            psi0,
        })
    }
}

impl GgPrior {
    /// `μ₀ = μ̂`, `Σ₀ = I` and the noise covariance fixed at `Σ̂`.
    pub fn from_data(y: &Matrix) -> Result<Self> {
        Ok(Self {
            mu0: row_sum(y) / y.nrows() as f64,
            sigma0: SpdMatrix::identity(y.ncols()),
            sigma_star: covariance_estimate(y)?,
        })
    }
}

/// 25 log-spaced kernel widths in `[0.5, 50]`.
pub fn tune_grid() -> Vec<f64> {
    let (lo, hi) = (0.5f64.ln(), 50f64.ln());
    (0..25)
        .map(|i| (lo + (hi - lo) * i as f64 / 24.0).exp())
        .collect()
}

/// Log marginal likelihood of independent per-asset GP regressions with
/// signal variance `Ω₀[j, j]` and noise variance equal to the sample variance.
fn log_marginal_likelihood(y: &Matrix, omega0: &SpdMatrix, gamma: f64) -> Result<f64> {
    let n = y.nrows();
    let times: Vec<f64> = (1..=n).map(|t| t as f64).collect();
    let k = rbf_gram(&times, gamma)?;
    let mut total = 0.0;
    for j in 0..y.ncols() {
        let col: Vector = y.column(j).into_owned();
        let mean = col.mean();
        let noise = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let noise = noise.max(1e-12);
        let cov = k.as_matrix() * omega0.as_matrix()[(j, j)] + Matrix::identity(n, n) * noise;
        let cov = SpdMatrix::named(cov, "GP marginal covariance")?;
        total += -0.5 * col.dot(&cov.solve_vec(&col))
            - 0.5 * cov.log_det()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(total)
}

/// Kernel width on `grid` maximizing the log marginal likelihood (first wins ties).
pub fn select_rbf_width(y: &Matrix, omega0: &SpdMatrix, grid: &[f64]) -> Result<f64> {
    check_observations(y, 1, "kernel width selection")?;
    let mut best: Option<(f64, f64)> = None;
    for &gamma in grid {
        let ll = log_marginal_likelihood(y, omega0, gamma)?;
        if best.is_none_or(|(b, _)| ll > b) {
            best = Some((ll, gamma));
        }
    }
    best.map(|(_, g)| g)
        .ok_or_else(|| Error::InvalidParameter("empty kernel width grid".into()))
}
