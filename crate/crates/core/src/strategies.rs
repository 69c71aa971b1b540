//! Allocation strategies compared in backtests.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{equal_weights, ledoit_wolf, sample_covariance, ShrinkageTarget};
use crate::error::{Error, Result};
use crate::linalg::{row_sum, Matrix, SpdMatrix, Vector};
use crate::models::{select_rbf_width, tune_grid, ArModel, ArPrior, GpModel, GpPrior, GwModel, GwPrior};
use crate::simplex::{minimize_quadratic, DecisionSet};
use crate::vb::{alg_vb, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "algVB-gw")]
    VbGw,
    #[serde(rename = "algVB-ar")]
    VbAr,
    #[serde(rename = "algVB-gp")]
    VbGp,
    #[serde(rename = "markowitz")]
    Markowitz,
    #[serde(rename = "markowitz-lw")]
    MarkowitzLw,
    #[serde(rename = "equal-weights")]
    EqualWeights,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::VbGw,
        Strategy::VbAr,
        Strategy::VbGp,
        Strategy::Markowitz,
        Strategy::MarkowitzLw,
        Strategy::EqualWeights,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::VbGw => "algVB-gw",
            Strategy::VbAr => "algVB-ar",
            Strategy::VbGp => "algVB-gp",
            Strategy::Markowitz => "markowitz",
            Strategy::MarkowitzLw => "markowitz-lw",
            Strategy::EqualWeights => "equal-weights",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy `{s}`")))
    }
}

/// Mean–variance portfolio `argmax μᵀδ − (λ/2) δᵀΣδ` over `set`.
pub fn mean_variance(mu: &Vector, sigma: &SpdMatrix, lambda: f64, set: DecisionSet) -> Result<Vector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion must be positive, got {lambda}"
        )));
    }
    minimize_quadratic(&(sigma.as_matrix() * lambda), mu, set)
}

/// Fits `strategy` on the training rows. VB strategies use the data-driven
/// default priors; Markowitz variants solve over `config.decision_set`.
pub fn fit_strategy(strategy: Strategy, train: &Matrix, config: &SolverConfig) -> Result<Vector> {
    let d = train.ncols();
    let mu = || row_sum(train) / train.nrows() as f64;
    match strategy {
        Strategy::VbGw => Ok(alg_vb(&GwModel::new(train, GwPrior::from_data(train)?)?, config)?.decision),
        Strategy::VbAr => Ok(alg_vb(&ArModel::new(train, ArPrior::from_data(train)?)?, config)?.decision),
        Strategy::VbGp => {
            let omega0 = SpdMatrix::identity(d);
            let gamma = select_rbf_width(train, &omega0, &tune_grid())?;
            Ok(alg_vb(&GpModel::new(train, GpPrior::from_data(train, gamma)?)?, config)?.decision)
        }
        Strategy::Markowitz => {
            if train.nrows() < 2 {
                return Err(Error::InsufficientData("Markowitz needs at least 2 rows".into()));
            }
            let sigma =
                SpdMatrix::named(sample_covariance(train, false), "sample covariance").map_err(|_| {
                    Error::Singular("sample covariance is not invertible; use markowitz-lw".into())
                })?;
            mean_variance(&mu(), &sigma, config.lambda, config.decision_set)
        }
        Strategy::MarkowitzLw => {
            let lw = ledoit_wolf(train, ShrinkageTarget::ScaledIdentity)?;
            mean_variance(&mu(), &lw.covariance, config.lambda, config.decision_set)
        }
        Strategy::EqualWeights => Ok(equal_weights(d)),
    }
}
