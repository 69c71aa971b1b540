//! Vector autoregression of order one: `Y_t = Γ Y_{t-1} + ε_t`,
//! `ε_t ~ N(0, Λ⁻¹)`, with `Γ ~ MN(M₀, U₀, V₀)` and `Λ ~ W(ν₀, ψ₀)`.
//!
//! Row 0 of the returns matrix is the initial observation `Y_0`; the
//! remaining `n` rows are the transitions.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{kron, row, unvec, vec, Matrix, SpdMatrix, Vector};
use crate::models::{
    check_dim, check_observations, check_step_inputs, scaled_change, scaled_change_vec, VariationalModel,
};

#[derive(Debug, Clone)]
pub struct ArPrior {
    pub m0: Matrix,
    /// Row covariance of the transition matrix.
    pub u0: SpdMatrix,
    /// Column covariance of the transition matrix.
    pub v0: SpdMatrix,
    pub nu0: f64,
    pub psi0: SpdMatrix,
}

impl ArPrior {
    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim("AR prior mean (square)", d, self.m0.ncols())?;
        check_dim("AR prior row covariance", d, self.u0.dim())?;
        check_dim("AR prior column covariance", d, self.v0.dim())?;
        check_dim("AR prior Wishart scale", d, self.psi0.dim())?;
        if !(self.nu0 >= d as f64) {
            return Err(Error::InvalidParameter(format!(
                "Wishart prior degrees of freedom {} must be at least d = {d}",
                self.nu0
            )));
        }
        Ok(())
    }
}

/// Mean-field parameters `(ξ_y, Λ_y, M_Γ, Cov(vec Γ), ν_Λ, ψ_Λ)`.
#[derive(Debug, Clone)]
pub struct ArState {
    pub xi_y: Vector,
    pub lambda_y: SpdMatrix,
    pub m_gamma: Matrix,
    /// Covariance of `vec(Γ)` (column stacking), size `d² × d²`.
    pub cov_gamma: SpdMatrix,
    pub nu_lambda: f64,
    pub psi_lambda: SpdMatrix,
}

#[derive(Debug, Clone)]
pub struct ArModel {
    prior: ArPrior,
    n: usize,
    last: Vector,
    /// `Σ_{t=0}^{n} Y_t Y_tᵀ`: lagged Gram including the predictive step.
    gram: Matrix,
    /// `Σ_{t=1}^{n} Y_t Y_{t-1}ᵀ`.
    cross: Matrix,
    /// `Σ_{t=1}^{n} Y_t Y_tᵀ`.
    gram_targets: Matrix,
    psi0_inv: Matrix,
    prior_precision: Matrix,
    prior_precision_m0: Vector,
}

impl ArModel {
    /// `returns` has `n + 1` rows: `Y_0, …, Y_n`.
    pub fn new(returns: &Matrix, prior: ArPrior) -> Result<Self> {
        check_observations(returns, 2, "autoregressive model")?;
        prior.validate()?;
        check_dim("AR observations", prior.dim(), returns.ncols())?;
        let rows = returns.nrows();
        let n = rows - 1;
        let d = prior.dim();
        let mut cross = Matrix::zeros(d, d);
        for t in 1..rows {
            cross += row(returns, t) * row(returns, t - 1).transpose();
        }
        let gram = returns.transpose() * returns;
        let targets = returns.rows(1, n);
        let gram_targets = targets.transpose() * targets;
        let prior_precision = kron(&prior.v0.inverse_matrix(), &prior.u0.inverse_matrix());
        let prior_precision_m0 = &prior_precision * vec(&prior.m0);
        Ok(Self {
            n,
            last: row(returns, n),
            gram,
            cross,
            gram_targets,
            psi0_inv: prior.psi0.inverse_matrix(),
            prior_precision,
            prior_precision_m0,
            prior,
        })
    }

    pub fn prior(&self) -> &ArPrior {
        &self.prior
    }

    /// Number of transitions.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn last_observation(&self) -> &Vector {
        &self.last
    }

    fn nu_post(&self) -> f64 {
        self.n as f64 + self.prior.nu0 + 1.0
    }

    /// Factor of `vec Γ` given the precision mean `W` and the predictive mean.
    fn gamma_factor(&self, w: &Matrix, xi_y: &Vector) -> Result<(Matrix, SpdMatrix)> {
        let d = self.dim();
        let precision = SpdMatrix::named(kron(&self.gram, w) + &self.prior_precision, "Γ precision")?;
        let cov = precision.inverse();
        let cross = &self.cross + xi_y * self.last.transpose();
        let rhs = vec(&(w * cross)) + &self.prior_precision_m0;
        let mean = cov.as_matrix() * rhs;
        Ok((unvec(&mean, d, d)?, cov))
    }

    /// Inverse Wishart scale implied by the other factors: `ψ₀⁻¹` plus the
    /// expected residual scatter over all `n + 1` transitions.
    fn inverse_scale(&self, xi_y: &Vector, lambda_y: &SpdMatrix, m: &Matrix, cov: &SpdMatrix) -> Matrix {
        let cross = &self.cross + xi_y * self.last.transpose();
        let mb = m * cross.transpose();
        &self.psi0_inv + &self.gram_targets + lambda_y.inverse_matrix() + xi_y * xi_y.transpose()
            - (&mb + mb.transpose())
            + expected_quadratic(m, cov, &self.gram)
    }
}

/// `E[Γ G Γᵀ]` for `vec Γ ~ N(vec M, C)`, using the spectral decomposition
/// `C = Σ σᵢ uᵢ uᵢᵀ`: `M G Mᵀ + Σ σᵢ unvec(uᵢ) G unvec(uᵢ)ᵀ`.
pub(crate) fn expected_quadratic(m: &Matrix, cov: &SpdMatrix, g: &Matrix) -> Matrix {
    let d = m.nrows();
    let eig = SymmetricEigen::new(cov.as_matrix().clone());
    let mut out = m * g * m.transpose();
    for (i, sigma) in eig.eigenvalues.iter().enumerate() {
        let u = Matrix::from_column_slice(d, d, eig.eigenvectors.column(i).as_slice());
        out += (&u * g * u.transpose()) * *sigma;
    }
    crate::linalg::symmetrize(&out)
}

impl VariationalModel for ArModel {
    type State = ArState;

    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn initial_state(&self) -> Result<ArState> {
        let nu = self.nu_post();
        let psi = SpdMatrix::named(&self.psi0_inv + &self.gram_targets, "initial Wishart scale")?.inverse();
        let w = psi.as_matrix() * nu;
        let xi_y = &self.prior.m0 * &self.last;
        let (m_gamma, cov_gamma) = self.gamma_factor(&w, &xi_y)?;
        Ok(ArState {
            xi_y,
            lambda_y: SpdMatrix::named(w, "Λ_y")?,
            m_gamma,
            cov_gamma,
            nu_lambda: nu,
            psi_lambda: psi,
        })
    }

    fn fixed_point_step(&self, state: &ArState, delta: &Vector, lambda: f64) -> Result<ArState> {
        check_step_inputs(self.dim(), delta, lambda)?;
        let nu = state.nu_lambda;
        let w = state.psi_lambda.as_matrix() * nu;
        let w_inv = state.psi_lambda.inverse_matrix() / nu;

        let xi_y = &state.m_gamma * &self.last - &w_inv * delta * lambda;
        let lambda_y = SpdMatrix::named(w.clone(), "Λ_y")?;
        let (m_gamma, cov_gamma) = self.gamma_factor(&w, &xi_y)?;
        let nu_lambda = self.nu_post();
        let inv_scale = self.inverse_scale(&xi_y, &lambda_y, &m_gamma, &cov_gamma);
        let psi_lambda = SpdMatrix::named(inv_scale, "ψ_Λ update")
            .map_err(|_| Error::Singular("ψ_Λ update (degenerate data)".into()))?
            .inverse();

        Ok(ArState {
            xi_y,
            lambda_y,
            m_gamma,
            cov_gamma,
            nu_lambda,
            psi_lambda,
        })
    }

    fn objective(&self, state: &ArState, delta: &Vector, lambda: f64) -> Result<f64> {
        check_step_inputs(self.dim(), delta, lambda)?;
        let inv_scale = self.inverse_scale(&state.xi_y, &state.lambda_y, &state.m_gamma, &state.cov_gamma);
        let trace_term = (inv_scale * state.psi_lambda.as_matrix()).trace();
        let m = vec(&state.m_gamma);
        let prior_term = (&self.prior_precision * state.cov_gamma.as_matrix()).trace()
            + m.dot(&(&self.prior_precision * &m));
        let coef = 0.5 * (self.n as f64 + self.prior.nu0 + 1.0);

        Ok(-0.5 * state.nu_lambda * trace_term - 0.5 * prior_term
            + m.dot(&self.prior_precision_m0)
            + coef * state.psi_lambda.log_det()
            - 0.5 * state.lambda_y.log_det()
            + 0.5 * state.cov_gamma.log_det()
            - lambda * delta.dot(&state.xi_y))
    }

    fn residual(&self, prev: &ArState, next: &ArState) -> f64 {
        [
            scaled_change_vec(&prev.xi_y, &next.xi_y),
            scaled_change(prev.lambda_y.as_matrix(), next.lambda_y.as_matrix()),
            scaled_change(&prev.m_gamma, &next.m_gamma),
            scaled_change(prev.cov_gamma.as_matrix(), next.cov_gamma.as_matrix()),
            (prev.nu_lambda - next.nu_lambda).abs() / next.nu_lambda.abs().max(1.0),
            scaled_change(prev.psi_lambda.as_matrix(), next.psi_lambda.as_matrix()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn predictive_mean<'a>(&self, state: &'a ArState) -> &'a Vector {
        &state.xi_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::envelope_gradient;
    use crate::models::testutil::{converge, fd_gradient, returns};

    fn prior(d: usize) -> ArPrior {
        ArPrior {
            m0: Matrix::identity(d, d) * 0.1,
            u0: SpdMatrix::identity(d),
            v0: SpdMatrix::identity(d),
            nu0: d as f64,
            psi0: SpdMatrix::scaled_identity(d, 10.0).unwrap(),
        }
    }

    #[test]
    fn spectral_term_matches_index_sum() {
        let d = 3;
        let m = Matrix::from_fn(d, d, |i, j| 0.1 * i as f64 - 0.2 * j as f64);
        let a = Matrix::from_fn(d * d, d * d, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let cov = SpdMatrix::new(&a * a.transpose() + Matrix::identity(d * d, d * d)).unwrap();
        let g = Matrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.2, -0.1, 0.2, 1.5]);
        let spectral = expected_quadratic(&m, &cov, &g);
        // E[Γ_ac Γ_bd] = M_ac M_bd + C[(c d) + a, (d d) + b] under column stacking.
        let c = cov.as_matrix();
        let oracle = Matrix::from_fn(d, d, |ra, rb| {
            let mut s = 0.0;
            for cc in 0..d {
                for dd in 0..d {
                    s += g[(cc, dd)] * (m[(ra, cc)] * m[(rb, dd)] + c[(cc * d + ra, dd * d + rb)]);
                }
            }
            s
        });
        assert!(crate::linalg::max_abs_diff(&spectral, &oracle) < 1e-12);
    }

    #[test]
    fn scalar_spectral_term() {
        let y = Matrix::from_column_slice(4, 1, &[0.2, -0.1, 0.4, 0.05]);
        let model = ArModel::new(&y, prior(1)).unwrap();
        let cov = SpdMatrix::new(Matrix::from_element(1, 1, 0.37)).unwrap();
        let m = Matrix::from_element(1, 1, 0.0);
        let sum_sq: f64 = y.iter().map(|v| v * v).sum();
        let q = expected_quadratic(&m, &cov, &model.gram);
        assert!((q[(0, 0)] - 0.37 * sum_sq).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_prediction_is_one_step_ahead() {
        let y = returns(31, 2, 21);
        let model = ArModel::new(&y, prior(2)).unwrap();
        let s = converge(&model, &Vector::from_element(2, 0.5), 0.0, 1e-14);
        let next = model
            .fixed_point_step(&s, &Vector::from_element(2, 0.5), 0.0)
            .unwrap();
        assert!((&next.xi_y - &next.m_gamma * model.last_observation()).amax() < 1e-14);
    }

    #[test]
    fn nu_after_one_step() {
        let y = returns(11, 2, 22);
        let model = ArModel::new(&y, prior(2)).unwrap();
        let s = model.initial_state().unwrap();
        let next = model
            .fixed_point_step(&s, &Vector::from_element(2, 0.5), 1.0)
            .unwrap();
        assert_eq!(next.nu_lambda, 10.0 + 2.0 + 1.0);
    }

    /// Scalar evidence lower bound written term by term.
    fn scalar_elbo(s: &ArState, y: &[f64], p: &ArPrior, delta: f64, lambda: f64) -> f64 {
        let n = y.len() - 1;
        let (xi, ly, m, c, nu, psi) = (
            s.xi_y[0],
            s.lambda_y.as_matrix()[(0, 0)],
            s.m_gamma[(0, 0)],
            s.cov_gamma.as_matrix()[(0, 0)],
            s.nu_lambda,
            s.psi_lambda.as_matrix()[(0, 0)],
        );
        let e_g2 = m * m + c;
        let mut scatter = 0.0;
        for t in 1..=n {
            scatter += y[t] * y[t] - 2.0 * m * y[t] * y[t - 1] + e_g2 * y[t - 1] * y[t - 1];
        }
        scatter += 1.0 / ly + xi * xi - 2.0 * m * xi * y[n] + e_g2 * y[n] * y[n];
        let e_lambda = nu * psi;
        let likelihood = 0.5 * (n as f64 + 1.0) * psi.ln() - 0.5 * e_lambda * scatter;
        let p0 = 1.0 / (p.u0.as_matrix()[(0, 0)] * p.v0.as_matrix()[(0, 0)]);
        let prior_gamma = -0.5 * p0 * (c + (m - p.m0[(0, 0)]).powi(2));
        let psi0 = p.psi0.as_matrix()[(0, 0)];
        let prior_lambda = 0.5 * (p.nu0 - 2.0) * psi.ln() - 0.5 * e_lambda / psi0;
        let entropy = -0.5 * ly.ln() + 0.5 * c.ln() + psi.ln();
        likelihood + prior_gamma + prior_lambda + entropy - lambda * delta * xi
    }

    #[test]
    fn scalar_objective_matches_term_by_term_elbo() {
        let data = [0.1, 0.2, -0.05, 0.15];
        let y = Matrix::from_column_slice(4, 1, &data);
        let mut p = prior(1);
        p.u0 = SpdMatrix::scaled_identity(1, 0.5).unwrap();
        let model = ArModel::new(&y, p.clone()).unwrap();
        let one = Vector::from_element(1, 1.0);
        let s1 = converge(&model, &one, 0.8, 1e-14);
        let mut s2 = model
            .fixed_point_step(&model.initial_state().unwrap(), &one, 3.0)
            .unwrap();
        s2.m_gamma[(0, 0)] += 0.3;
        let lib = model.objective(&s1, &one, 0.8).unwrap() - model.objective(&s2, &one, 0.8).unwrap();
        let oracle = scalar_elbo(&s1, &data, &p, 1.0, 0.8) - scalar_elbo(&s2, &data, &p, 1.0, 0.8);
        assert!((lib - oracle).abs() < 1e-10, "{lib} vs {oracle}");
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let y = returns(25, 2, 23);
        let model = ArModel::new(&y, prior(2)).unwrap();
        let delta = Vector::from_column_slice(&[0.35, 0.65]);
        let lambda = 3.0;
        let s = converge(&model, &delta, lambda, 1e-14);
        let g = envelope_gradient(&model, &s, &delta, lambda, 1e-10).unwrap();
        let fd = fd_gradient(&model, &delta, lambda, 1e-5);
        assert!((&g - &fd).norm() <= 1e-4 * fd.norm(), "{g} vs {fd}");
    }

    #[test]
    fn needs_a_transition() {
        let y = returns(1, 2, 24);
        assert!(matches!(
            ArModel::new(&y, prior(2)),
            Err(Error::InsufficientData(_))
        ));
    }
}
