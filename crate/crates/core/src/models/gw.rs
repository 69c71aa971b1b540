//! Gaussian–Wishart model: `Y_t ~ N(μ, Λ⁻¹)` i.i.d., `μ ~ N(μ₀, Λ₀⁻¹)`,
//! `Λ ~ W(ν₀, ψ₀)`.

use crate::error::{Error, Result};
use crate::linalg::{gram_of_rows, row_sum, sym_outer, Matrix, SpdMatrix, Vector};
use crate::models::{
    check_dim, check_observations, check_step_inputs, scaled_change, scaled_change_vec, VariationalModel,
};

#[derive(Debug, Clone)]
pub struct GwPrior {
    pub mu0: Vector,
    /// Prior precision of the mean.
    pub lambda0: SpdMatrix,
    pub nu0: f64,
    pub psi0: SpdMatrix,
}

impl GwPrior {
    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim("GW prior precision", d, self.lambda0.dim())?;
        check_dim("GW prior Wishart scale", d, self.psi0.dim())?;
        if !(self.nu0 >= d as f64) {
            return Err(Error::InvalidParameter(format!(
                "Wishart prior degrees of freedom {} must be at least d = {d}",
                self.nu0
            )));
        }
        Ok(())
    }
}

/// Mean-field parameters `(ξ_y, Λ_y, ξ_μ, Λ_μ, ν_Λ, ψ_Λ)`.
#[derive(Debug, Clone)]
pub struct GwState {
    pub xi_y: Vector,
    pub lambda_y: SpdMatrix,
    pub xi_mu: Vector,
    pub lambda_mu: SpdMatrix,
    pub nu_lambda: f64,
    pub psi_lambda: SpdMatrix,
}

#[derive(Debug, Clone)]
pub struct GwModel {
    prior: GwPrior,
    n: usize,
    sum_y: Vector,
    sum_yyt: Matrix,
    scatter: Matrix,
    psi0_inv: Matrix,
    lambda0_mu0: Vector,
}

impl GwModel {
    /// `returns` holds one observation per row.
    pub fn new(returns: &Matrix, prior: GwPrior) -> Result<Self> {
        check_observations(returns, 1, "Gaussian-Wishart model")?;
        prior.validate()?;
        check_dim("GW observations", prior.dim(), returns.ncols())?;
        let n = returns.nrows();
        let sum_y = row_sum(returns);
        let sum_yyt = gram_of_rows(returns);
        let mean = &sum_y / n as f64;
        let scatter = &sum_yyt - &mean * mean.transpose() * n as f64;
        let psi0_inv = prior.psi0.inverse_matrix();
        let lambda0_mu0 = prior.lambda0.as_matrix() * &prior.mu0;
        Ok(Self {
            prior,
            n,
            sum_y,
            sum_yyt,
            scatter,
            psi0_inv,
            lambda0_mu0,
        })
    }

    pub fn prior(&self) -> &GwPrior {
        &self.prior
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn nu_post(&self) -> f64 {
        self.n as f64 + self.prior.nu0 + 1.0
    }

    /// Inverse Wishart scale implied by the current moments:
    /// `ψ₀⁻¹ + E[(Y - μ)(Y - μ)ᵀ]` summed over the n observations and the
    /// predictive draw.
    fn inverse_scale(
        &self,
        xi_y: &Vector,
        lambda_y: &SpdMatrix,
        xi_mu: &Vector,
        lambda_mu: &SpdMatrix,
    ) -> Matrix {
        let n1 = (self.n + 1) as f64;
        let second_mu = lambda_mu.inverse_matrix() + xi_mu * xi_mu.transpose();
        let a = xi_y + &self.sum_y;
        lambda_y.inverse_matrix() + xi_y * xi_y.transpose() + second_mu * n1 + &self.sum_yyt
            - sym_outer(&a, xi_mu)
            + &self.psi0_inv
    }
}

impl VariationalModel for GwModel {
    type State = GwState;

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn initial_state(&self) -> Result<GwState> {
        let n = self.n as f64;
        let nu = self.nu_post();
        let psi = SpdMatrix::named(&self.psi0_inv + &self.scatter, "initial Wishart scale")?.inverse();
        let w = psi.as_matrix() * nu;
        let mean = &self.sum_y / n;
        let lambda_mu = SpdMatrix::named(&w * (n + 1.0) + self.prior.lambda0.as_matrix(), "Λ_μ")?;
        Ok(GwState {
            xi_y: mean.clone(),
            lambda_y: SpdMatrix::named(w, "Λ_y")?,
            xi_mu: mean,
            lambda_mu,
            nu_lambda: nu,
            psi_lambda: psi,
        })
    }

    fn fixed_point_step(&self, state: &GwState, delta: &Vector, lambda: f64) -> Result<GwState> {
        let d = self.dim();
        check_step_inputs(d, delta, lambda)?;
        let n1 = (self.n + 1) as f64;
        let nu = state.nu_lambda;
        let w = state.psi_lambda.as_matrix() * nu;
        let w_inv = state.psi_lambda.inverse_matrix() / nu;

        let xi_y = &state.xi_mu - &w_inv * delta * lambda;
        let lambda_y = SpdMatrix::named(w.clone(), "Λ_y")?;
        let lambda_mu = SpdMatrix::named(&w * n1 + self.prior.lambda0.as_matrix(), "Λ_μ")?;
        let xi_mu = lambda_mu.solve_vec(&(&w * (&xi_y + &self.sum_y) + &self.lambda0_mu0));
        let nu_lambda = self.nu_post();
        let inv_scale = self.inverse_scale(&xi_y, &lambda_y, &xi_mu, &lambda_mu);
        let psi_lambda = SpdMatrix::named(inv_scale, "ψ_Λ update")
            .map_err(|_| Error::Singular("ψ_Λ update (degenerate data)".into()))?
            .inverse();

        Ok(GwState {
            xi_y,
            lambda_y,
            xi_mu,
            lambda_mu,
            nu_lambda,
            psi_lambda,
        })
    }

    fn objective(&self, state: &GwState, delta: &Vector, lambda: f64) -> Result<f64> {
        check_step_inputs(self.dim(), delta, lambda)?;
        let inv_scale = self.inverse_scale(&state.xi_y, &state.lambda_y, &state.xi_mu, &state.lambda_mu);
        let trace_term = (inv_scale * state.psi_lambda.as_matrix()).trace();
        let second_mu = state.lambda_mu.inverse_matrix() + &state.xi_mu * state.xi_mu.transpose();
        let prior_term = (second_mu * self.prior.lambda0.as_matrix()).trace();
        let coef = 0.5 * (self.n as f64 + self.prior.nu0 + 1.0);

        Ok(-0.5 * state.nu_lambda * trace_term - 0.5 * prior_term
            + state.xi_mu.dot(&self.lambda0_mu0)
            + coef * state.psi_lambda.log_det()
            - 0.5 * (state.lambda_y.log_det() + state.lambda_mu.log_det())
            - lambda * delta.dot(&state.xi_y))
    }

    fn residual(&self, prev: &GwState, next: &GwState) -> f64 {
        [
            scaled_change_vec(&prev.xi_y, &next.xi_y),
            scaled_change(prev.lambda_y.as_matrix(), next.lambda_y.as_matrix()),
            scaled_change_vec(&prev.xi_mu, &next.xi_mu),
            scaled_change(prev.lambda_mu.as_matrix(), next.lambda_mu.as_matrix()),
            (prev.nu_lambda - next.nu_lambda).abs() / next.nu_lambda.abs().max(1.0),
            scaled_change(prev.psi_lambda.as_matrix(), next.psi_lambda.as_matrix()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn predictive_mean<'a>(&self, state: &'a GwState) -> &'a Vector {
        &state.xi_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::envelope_gradient;
    use crate::models::testutil::{converge, fd_gradient, returns};

    fn prior(d: usize, y: &Matrix) -> GwPrior {
        GwPrior {
            mu0: row_sum(y) / y.nrows() as f64,
            lambda0: SpdMatrix::identity(d),
            nu0: d as f64,
            psi0: SpdMatrix::scaled_identity(d, 10.0).unwrap(),
        }
    }

    /// Scalar sweep written directly from the centered form of each update.
    fn naive_scalar_sweep(s: &GwState, y: &[f64], p: &GwPrior, delta: f64, lambda: f64) -> [f64; 6] {
        let n = y.len() as f64;
        let w = s.nu_lambda * s.psi_lambda.as_matrix()[(0, 0)];
        let xi_mu_old = s.xi_mu[0];
        let xi_y = xi_mu_old - lambda * delta / w;
        let lambda_y = w;
        let l0 = p.lambda0.as_matrix()[(0, 0)];
        let lambda_mu = (n + 1.0) * w + l0;
        let xi_mu = (w * (xi_y + y.iter().sum::<f64>()) + l0 * p.mu0[0]) / lambda_mu;
        let nu = n + p.nu0 + 1.0;
        let scatter: f64 = y.iter().map(|v| (v - xi_mu).powi(2)).sum();
        let inv = 1.0 / lambda_y
            + (xi_y - xi_mu).powi(2)
            + scatter
            + (n + 1.0) / lambda_mu
            + 1.0 / p.psi0.as_matrix()[(0, 0)];
        [xi_y, lambda_y, xi_mu, lambda_mu, nu, 1.0 / inv]
    }

    fn flatten(s: &GwState) -> [f64; 6] {
        [
            s.xi_y[0],
            s.lambda_y.as_matrix()[(0, 0)],
            s.xi_mu[0],
            s.lambda_mu.as_matrix()[(0, 0)],
            s.nu_lambda,
            s.psi_lambda.as_matrix()[(0, 0)],
        ]
    }

    #[test]
    fn scalar_sweep_matches_straight_line_oracle() {
        let y = Matrix::from_column_slice(2, 1, &[0.3, -0.1]);
        let p = prior(1, &y);
        let model = GwModel::new(&y, p.clone()).unwrap();
        let delta = Vector::from_element(1, 0.7);
        let mut state = model.initial_state().unwrap();
        for _ in 0..30 {
            let expected = naive_scalar_sweep(&state, &[0.3, -0.1], &p, 0.7, 1.3);
            state = model.fixed_point_step(&state, &delta, 1.3).unwrap();
            for (a, b) in flatten(&state).iter().zip(expected.iter()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nu_after_one_step() {
        let y = returns(17, 3, 1);
        let model = GwModel::new(&y, prior(3, &y)).unwrap();
        let mut s = model.initial_state().unwrap();
        s.nu_lambda = 123.0;
        let next = model
            .fixed_point_step(&s, &Vector::from_element(3, 1.0 / 3.0), 2.0)
            .unwrap();
        assert_eq!(next.nu_lambda, 17.0 + 3.0 + 1.0);
    }

    #[test]
    fn zero_lambda_fixed_point_has_untilted_prediction() {
        let y = returns(30, 2, 2);
        let model = GwModel::new(&y, prior(2, &y)).unwrap();
        let s = converge(&model, &Vector::from_element(2, 0.5), 0.0, 1e-14);
        assert!((&s.xi_y - &s.xi_mu).amax() < 1e-12);
    }

    #[test]
    fn zero_lambda_objective_ignores_decision() {
        let y = returns(25, 3, 3);
        let model = GwModel::new(&y, prior(3, &y)).unwrap();
        let a = Vector::from_column_slice(&[1.0, 0.0, 0.0]);
        let b = Vector::from_column_slice(&[0.2, 0.3, 0.5]);
        let oa = model
            .objective(&converge(&model, &a, 0.0, 1e-14), &a, 0.0)
            .unwrap();
        let ob = model
            .objective(&converge(&model, &b, 0.0, 1e-14), &b, 0.0)
            .unwrap();
        assert!((oa - ob).abs() < 1e-10);
    }

    /// Scalar evidence lower bound written term by term (likelihood, priors,
    /// entropies) with the Gamma form of the one-dimensional Wishart factor.
    /// Constants that only depend on `ν` are dropped; `ν` is fixed after one sweep.
    fn scalar_elbo(s: &GwState, y: &[f64], p: &GwPrior, delta: f64, lambda: f64) -> f64 {
        let [xi_y, ly, xi_mu, lmu, nu, psi] = flatten(s);
        let n = y.len() as f64;
        let e_lambda = nu * psi;
        let e_log_lambda = psi.ln();
        let scatter = 1.0 / ly
            + (xi_y - xi_mu).powi(2)
            + y.iter().map(|v| (v - xi_mu).powi(2)).sum::<f64>()
            + (n + 1.0) / lmu;
        let likelihood = 0.5 * (n + 1.0) * e_log_lambda - 0.5 * e_lambda * scatter;
        let l0 = p.lambda0.as_matrix()[(0, 0)];
        let prior_mu = -0.5 * l0 * (1.0 / lmu + (xi_mu - p.mu0[0]).powi(2));
        let psi0 = p.psi0.as_matrix()[(0, 0)];
        let prior_lambda = 0.5 * (p.nu0 - 2.0) * e_log_lambda - 0.5 * e_lambda / psi0;
        let entropy = -0.5 * ly.ln() - 0.5 * lmu.ln() + psi.ln();
        likelihood + prior_mu + prior_lambda + entropy - lambda * delta * xi_y
    }

    #[test]
    fn scalar_objective_matches_term_by_term_elbo() {
        let data = [0.12, -0.05, 0.31, 0.02];
        let y = Matrix::from_column_slice(4, 1, &data);
        let mut p = prior(1, &y);
        p.mu0 = Vector::from_element(1, 0.05);
        let model = GwModel::new(&y, p.clone()).unwrap();
        let one = Vector::from_element(1, 1.0);
        let s1 = converge(&model, &one, 1.5, 1e-14);
        let mut s2 = model
            .fixed_point_step(&model.initial_state().unwrap(), &(&one * 3.0), 0.4)
            .unwrap();
        s2.xi_y[0] += 0.2;
        let lib = model.objective(&s1, &one, 1.5).unwrap() - model.objective(&s2, &one, 1.5).unwrap();
        let oracle = scalar_elbo(&s1, &data, &p, 1.0, 1.5) - scalar_elbo(&s2, &data, &p, 1.0, 1.5);
        assert!((lib - oracle).abs() < 1e-10, "{lib} vs {oracle}");
    }

    #[test]
    fn converged_state_maximizes_objective() {
        let y = returns(40, 3, 4);
        let model = GwModel::new(&y, prior(3, &y)).unwrap();
        let delta = Vector::from_column_slice(&[0.5, 0.25, 0.25]);
        let best = converge(&model, &delta, 3.0, 1e-14);
        let top = model.objective(&best, &delta, 3.0).unwrap();
        let mut s = model.initial_state().unwrap();
        for _ in 0..5 {
            assert!(model.objective(&s, &delta, 3.0).unwrap() <= top + 1e-10);
            s = model.fixed_point_step(&s, &delta, 3.0).unwrap();
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let y = returns(20, 3, 5);
        let model = GwModel::new(&y, prior(3, &y)).unwrap();
        let delta = Vector::from_column_slice(&[0.2, 0.5, 0.3]);
        let lambda = 2.0;
        let s = converge(&model, &delta, lambda, 1e-14);
        let g = envelope_gradient(&model, &s, &delta, lambda, 1e-10).unwrap();
        let fd = fd_gradient(&model, &delta, lambda, 1e-5);
        assert!((&g - &fd).norm() <= 1e-4 * fd.norm(), "{g} vs {fd}");
    }

    #[test]
    fn envelope_gradient_refuses_unconverged_state() {
        let y = returns(20, 2, 6);
        let model = GwModel::new(&y, prior(2, &y)).unwrap();
        let delta = Vector::from_column_slice(&[1.0, 0.0]);
        let s = model.initial_state().unwrap();
        assert!(envelope_gradient(&model, &s, &delta, 5.0, 1e-10).is_err());
    }

    #[test]
    fn flat_prior_recovers_sample_mean() {
        let y = returns(60, 2, 7);
        let mut p = prior(2, &y);
        p.mu0 = Vector::zeros(2);
        p.lambda0 = SpdMatrix::scaled_identity(2, 1e-8).unwrap();
        let model = GwModel::new(&y, p).unwrap();
        let s = converge(&model, &Vector::from_element(2, 0.5), 0.0, 1e-14);
        let mean = row_sum(&y) / 60.0;
        assert!((&s.xi_mu - mean).amax() < 1e-4);
    }

    #[test]
    fn rejects_small_prior_dof_and_empty_data() {
        let y = returns(5, 3, 8);
        let mut p = prior(3, &y);
        p.nu0 = 2.0;
        assert!(GwModel::new(&y, p).is_err());
        assert!(GwModel::new(&Matrix::zeros(0, 3), prior(3, &y)).is_err());
    }
}
