//! Plug-in Markowitz targets that the variational decision approaches as the
//! sample size grows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row, Matrix, SpdMatrix, Vector};
use crate::models::check_observations;
use crate::simplex::{minimize_quadratic, DecisionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymptoticModel {
    Gw,
    Ar,
}

/// Plug-in mean and covariance `(μ̂, Σ̂)` at finite `n`.
///
/// GW: sample mean and `1/n` sample covariance. AR: least-squares transition
/// `M̂`, `μ̂ = M̂ Y_n` and the `1/n` residual covariance.
pub fn asymptotic_moments(returns: &Matrix, model: AsymptoticModel) -> Result<(Vector, Matrix)> {
    let d = returns.ncols();
    check_observations(returns, d + 1, "asymptotic target")?;
    match model {
        AsymptoticModel::Gw => {
            let n = returns.nrows() as f64;
            let mean = crate::linalg::row_sum(returns) / n;
            let centered = Matrix::from_fn(returns.nrows(), d, |t, j| returns[(t, j)] - mean[j]);
            Ok((mean, centered.transpose() * centered / n))
        }
        AsymptoticModel::Ar => {
            let (m_hat, resid_cov) = least_squares_transition(returns)?;
            let last = row(returns, returns.nrows() - 1);
            Ok((&m_hat * last, resid_cov))
        }
    }
}

/// Least-squares VAR(1) fit on rows `Y_0..Y_n`: returns `M̂` and the `1/n`
/// residual covariance.
pub(crate) fn least_squares_transition(returns: &Matrix) -> Result<(Matrix, Matrix)> {
    let rows = returns.nrows();
    let d = returns.ncols();
    if rows < 2 {
        return Err(Error::InsufficientData(
            "least-squares transition needs two rows".into(),
        ));
    }
    let n = rows - 1;
    let lagged = returns.rows(0, n);
    let targets = returns.rows(1, n);
    let gram = SpdMatrix::named(lagged.transpose() * lagged, "lagged Gram matrix")
        .map_err(|_| Error::Singular("lagged Gram matrix".into()))?;
    let cross = targets.transpose() * lagged;
    // M̂ = cross · gram⁻¹, computed as (gram⁻¹ crossᵀ)ᵀ.
    let m_hat = gram.solve(&cross.transpose()).transpose();
    let resid = targets - lagged * m_hat.transpose();
    let cov = resid.transpose() * resid / n as f64;
    debug_assert_eq!(cov.nrows(), d);
    Ok((m_hat, crate::linalg::symmetrize(&cov)))
}

/// Minimizer over `set` of `(λ²/2) δᵀΣ̂δ − λ δᵀμ̂`.
pub fn asymptotic_markowitz_target(
    returns: &Matrix,
    model: AsymptoticModel,
    lambda: f64,
    set: DecisionSet,
) -> Result<Vector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion must be positive, got {lambda}"
        )));
    }
    let (mu, sigma) = asymptotic_moments(returns, model)?;
    SpdMatrix::named(sigma.clone(), "plug-in covariance")
        .map_err(|_| Error::Singular("plug-in covariance".into()))?;
    minimize_quadratic(&(sigma * (lambda * lambda)), &(mu * lambda), set)
}
