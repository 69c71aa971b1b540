//! Gaussian–Gaussian model with known noise: `Y_t | μ ~ N(μ, Σ*)`,
//! `μ ~ N(μ₀, Σ₀)`. Its exact Bayesian decision is available in closed form,
//! which makes it the reference oracle for the variational solver.

use crate::error::{Error, Result};
use crate::linalg::{row_sum, Matrix, SpdMatrix, Vector};
use crate::models::{
    check_dim, check_observations, check_step_inputs, scaled_change, scaled_change_vec, VariationalModel,
};
use crate::simplex::{minimize_quadratic, DecisionSet};

#[derive(Debug, Clone)]
pub struct GgPrior {
    pub mu0: Vector,
    /// Prior covariance of the mean.
    pub sigma0: SpdMatrix,
    /// Known observation noise covariance.
    pub sigma_star: SpdMatrix,
}

impl GgPrior {
    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    fn validate(&self) -> Result<()> {
        check_dim("GG prior covariance", self.dim(), self.sigma0.dim())?;
        check_dim("GG noise covariance", self.dim(), self.sigma_star.dim())
    }
}

#[derive(Debug, Clone)]
pub struct GgState {
    pub xi_y: Vector,
    pub lambda_y: SpdMatrix,
    pub xi_mu: Vector,
    pub lambda_mu: SpdMatrix,
}

#[derive(Debug, Clone)]
pub struct GgModel {
    prior: GgPrior,
    n: usize,
    sum_y: Vector,
    sum_quad: f64,
    noise_precision: SpdMatrix,
    prior_precision: SpdMatrix,
}

impl GgModel {
    pub fn new(returns: &Matrix, prior: GgPrior) -> Result<Self> {
        check_observations(returns, 1, "Gaussian-Gaussian model")?;
        prior.validate()?;
        check_dim("GG observations", prior.dim(), returns.ncols())?;
        let noise_precision = prior.sigma_star.inverse();
        let p = noise_precision.as_matrix();
        let sum_quad = returns.row_iter().map(|r| (r * p * r.transpose())[(0, 0)]).sum();
        Ok(Self {
            n: returns.nrows(),
            sum_y: row_sum(returns),
            sum_quad,
            prior_precision: prior.sigma0.inverse(),
            noise_precision,
            prior,
        })
    }

    pub fn prior(&self) -> &GgPrior {
        &self.prior
    }
}

impl VariationalModel for GgModel {
    type State = GgState;

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn initial_state(&self) -> Result<GgState> {
        let mean = &self.sum_y / self.n as f64;
        let lambda_mu = SpdMatrix::named(
            self.noise_precision.as_matrix() * (self.n + 1) as f64 + self.prior_precision.as_matrix(),
            "Λ_μ",
        )?;
        Ok(GgState {
            xi_y: mean.clone(),
            lambda_y: self.noise_precision.clone(),
            xi_mu: mean,
            lambda_mu,
        })
    }

    fn fixed_point_step(&self, state: &GgState, delta: &Vector, lambda: f64) -> Result<GgState> {
        check_step_inputs(self.dim(), delta, lambda)?;
        let p = self.noise_precision.as_matrix();
        let xi_y = &state.xi_mu - self.prior.sigma_star.as_matrix() * delta * lambda;
        let lambda_mu = SpdMatrix::named(p * (self.n + 1) as f64 + self.prior_precision.as_matrix(), "Λ_μ")?;
        let rhs = p * (&self.sum_y + &xi_y) + self.prior_precision.as_matrix() * &self.prior.mu0;
        let xi_mu = lambda_mu.solve_vec(&rhs);
        Ok(GgState {
            xi_y,
            lambda_y: self.noise_precision.clone(),
            xi_mu,
            lambda_mu,
        })
    }

    fn objective(&self, state: &GgState, delta: &Vector, lambda: f64) -> Result<f64> {
        check_step_inputs(self.dim(), delta, lambda)?;
        let p = self.noise_precision.as_matrix();
        let cov_mu = state.lambda_mu.inverse_matrix();
        let n = self.n as f64;
        let m = &state.xi_mu;
        let quad = |a: &Vector, mat: &Matrix, b: &Vector| a.dot(&(mat * b));

        let observed =
            self.sum_quad - 2.0 * quad(m, p, &self.sum_y) + n * ((p * &cov_mu).trace() + quad(m, p, m));
        let gap = &state.xi_y - m;
        let predictive =
            (p * state.lambda_y.inverse_matrix()).trace() + quad(&gap, p, &gap) + (p * &cov_mu).trace();
        let prior_dev = m - &self.prior.mu0;
        let s0 = self.prior_precision.as_matrix();
        let prior = (s0 * &cov_mu).trace() + quad(&prior_dev, s0, &prior_dev);
        let entropy = -0.5 * (state.lambda_y.log_det() + state.lambda_mu.log_det());

        Ok(-0.5 * (observed + predictive + prior) + entropy - lambda * delta.dot(&state.xi_y))
    }

    fn residual(&self, prev: &GgState, next: &GgState) -> f64 {
        [
            scaled_change_vec(&prev.xi_y, &next.xi_y),
            scaled_change(prev.lambda_y.as_matrix(), next.lambda_y.as_matrix()),
            scaled_change_vec(&prev.xi_mu, &next.xi_mu),
            scaled_change(prev.lambda_mu.as_matrix(), next.lambda_mu.as_matrix()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn predictive_mean<'a>(&self, state: &'a GgState) -> &'a Vector {
        &state.xi_y
    }
}

/// Exact Bayesian decision of the Gaussian–Gaussian model.
///
/// The posterior predictive is `N(m̂, Σ* + Σ̂_μ)` with
/// `Σ̂_μ = (nΣ*⁻¹ + Σ₀⁻¹)⁻¹` and `m̂ = Σ̂_μ(Σ*⁻¹ΣY_t + Σ₀⁻¹μ₀)`, so the
/// expected exponential loss is `exp(-λδᵀm̂ + λ²/2 δᵀΣ̂_Yδ)` and the decision
/// minimizes the exponent over `set`.
pub fn gg_exact_decision(returns: &Matrix, prior: &GgPrior, lambda: f64, set: DecisionSet) -> Result<Vector> {
    check_observations(returns, 1, "Gaussian-Gaussian decision")?;
    prior.validate()?;
    check_dim("GG observations", prior.dim(), returns.ncols())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid risk aversion {lambda}")));
    }
    if lambda == 0.0 && set == DecisionSet::Rd {
        return Err(Error::InvalidParameter(
            "decision is undefined on R^d when lambda = 0".into(),
        ));
    }
    let (mean, cov) = gg_predictive(returns, prior)?;
    let h = cov * (lambda * lambda);
    let g = mean * lambda;
    minimize_quadratic(&h, &g, set)
}

/// Posterior predictive mean and covariance of the Gaussian–Gaussian model.
pub(crate) fn gg_predictive(returns: &Matrix, prior: &GgPrior) -> Result<(Vector, Matrix)> {
    let n = returns.nrows() as f64;
    let noise_precision = prior.sigma_star.inverse_matrix();
    let prior_precision = prior.sigma0.inverse_matrix();
    let post_precision = SpdMatrix::named(&noise_precision * n + &prior_precision, "posterior precision")?;
    let mean =
        post_precision.solve_vec(&(&noise_precision * row_sum(returns) + &prior_precision * &prior.mu0));
    let cov = prior.sigma_star.as_matrix() + post_precision.inverse_matrix();
    Ok((mean, cov))
}
