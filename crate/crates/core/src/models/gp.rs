//! Matrix Gaussian-process mean model: `Y_t ~ N(μ(t), Λ⁻¹)` with
//! `μ(·) ~ MGP(μ₀(·), K₀, Ω₀)` and `Λ ~ W(ν₀, ψ₀)`, observed at times
//! `1, …, n` and predicted at `n + 1`.
//!
//! Stacked paths are time-major: entry `t·d + j` holds asset `j` at time
//! `t + 1`. The prior covariance of the stacked path is then `K₀ ⊗ Ω₀`.
//!
//! The posterior precision `I ⊗ W + K₀⁻¹ ⊗ Ω₀⁻¹` is diagonalized by
//! `Q ⊗ B`, where `K₀ = Q D Qᵀ` and `B = L R` with `Ω₀ = L Lᵀ` and
//! `Lᵀ W L = R E Rᵀ`. The covariance is never formed densely during a solve.

use std::fmt;
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{rbf_gram, row_sum, Matrix, SpdMatrix, Vector};
use crate::models::{
    check_dim, check_observations, check_step_inputs, scaled_change, scaled_change_vec, VariationalModel,
};

/// Prior mean function of the Gaussian process.
#[derive(Clone, Default)]
pub enum MeanFunction {
    #[default]
    Zero,
    Constant(Vector),
    Custom(Arc<dyn Fn(f64) -> Vector + Send + Sync>),
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanFunction::Zero => write!(f, "Zero"),
            MeanFunction::Constant(v) => write!(f, "Constant({:?})", v.as_slice()),
            MeanFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl MeanFunction {
    pub fn eval(&self, t: f64, d: usize) -> Vector {
        match self {
            MeanFunction::Zero => Vector::zeros(d),
            MeanFunction::Constant(v) => v.clone(),
            MeanFunction::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpPrior {
    pub mean_fn: MeanFunction,
    /// RBF kernel width.
    pub gamma: f64,
    pub omega0: SpdMatrix,
    pub nu0: f64,
    pub psi0: SpdMatrix,
}

impl GpPrior {
    pub fn dim(&self) -> usize {
        self.omega0.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim("GP prior Wishart scale", d, self.psi0.dim())?;
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.nu0 >= d as f64) {
            return Err(Error::InvalidParameter(format!(
                "Wishart prior degrees of freedom {} must be at least d = {d}",
                self.nu0
            )));
        }
        Ok(())
    }
}

/// Posterior covariance of the stacked mean path in factored form
/// `(Q ⊗ B) diag(s) (Q ⊗ B)ᵀ`, with the per-time marginal blocks cached.
#[derive(Debug, Clone)]
pub struct GpPosteriorCovariance {
    q: Arc<Matrix>,
    b: Matrix,
    /// `s[(k, j)]` pairs kernel eigenvector `k` with column `j` of `B`.
    s: Matrix,
    blocks: Vec<Matrix>,
    log_det: f64,
}

impl GpPosteriorCovariance {
    fn new(q: Arc<Matrix>, b: Matrix, s: Matrix, log_det_omega0: f64) -> Self {
        let q2 = q.map(|x| x * x);
        // Row t of q2 · s holds the weights of block t in the basis of B.
        let weights = &q2 * &s;
        let blocks = (0..q.nrows())
            .map(|t| {
                let scaled = Matrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * weights[(t, j)]);
                crate::linalg::symmetrize(&(scaled * b.transpose()))
            })
            .collect();
        let log_det = s.iter().map(|x| x.ln()).sum::<f64>() + q.nrows() as f64 * log_det_omega0;
        Self {
            q,
            b,
            s,
            blocks,
            log_det,
        }
    }

    /// Number of time points `n + 1`.
    pub fn times(&self) -> usize {
        self.q.nrows()
    }

    /// Marginal covariance `Cov(μ(t), μ(t))` for zero-based time index `t`.
    pub fn block(&self, t: usize) -> &Matrix {
        &self.blocks[t]
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Dense `(n+1)d × (n+1)d` covariance. Intended for tests and small problems.
    pub fn to_dense(&self) -> Matrix {
        let t = crate::linalg::kron(&self.q, &self.b);
        let d = self.b.nrows();
        let diag = Vector::from_fn(self.s.len(), |i, _| self.s[(i / d, i % d)]);
        crate::linalg::symmetrize(&(&t * Matrix::from_diagonal(&diag) * t.transpose()))
    }
}

/// Mean-field parameters `(ξ_y, Λ_y, m_μ, Cov(μ), ν_Λ, ψ_Λ)`.
#[derive(Debug, Clone)]
pub struct GpState {
    pub xi_y: Vector,
    pub lambda_y: SpdMatrix,
    /// Stacked posterior mean path, time-major, length `(n+1)d`.
    pub m_mu: Vector,
    pub cov_mu: GpPosteriorCovariance,
    pub nu_lambda: f64,
    pub psi_lambda: SpdMatrix,
}

impl GpState {
    /// Posterior mean `m_μ(t)` for zero-based time index `t`.
    pub fn mean_at(&self, t: usize) -> Vector {
        let d = self.xi_y.len();
        self.m_mu.rows(t * d, d).into_owned()
    }
}

#[derive(Clone)]
pub struct GpModel {
    prior: GpPrior,
    n: usize,
    d: usize,
    /// Observations `Y_1..Y_n` as rows.
    y: Matrix,
    q: Arc<Matrix>,
    kernel_eigs: Vector,
    omega0_chol: Matrix,
    log_det_omega0: f64,
    /// Prior mean path as an `(n+1) × d` matrix.
    m0: Matrix,
    /// `K₀⁻¹ M₀ Ω₀⁻¹`.
    prior_pull: Matrix,
    psi0_inv: Matrix,
    initial_scatter: Matrix,
}

impl fmt::Debug for GpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GpModel")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("prior", &self.prior)
            .finish()
    }
}

impl GpModel {
    pub fn new(returns: &Matrix, prior: GpPrior) -> Result<Self> {
        check_observations(returns, 1, "Gaussian-process model")?;
        prior.validate()?;
        let d = prior.dim();
        check_dim("GP observations", d, returns.ncols())?;
        let n = returns.nrows();
        let times: Vec<f64> = (1..=n + 1).map(|t| t as f64).collect();
        let k0 = rbf_gram(&times, prior.gamma)?;
        let eig = SymmetricEigen::new(k0.into_matrix());
        if eig.eigenvalues.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::NotPositiveDefinite("RBF Gram matrix after jitter".into()));
        }
        let q = eig.eigenvectors;
        let kernel_eigs = eig.eigenvalues;

        let m0 = Matrix::from_fn(n + 1, d, |_, _| 0.0);
        let mut m0 = m0;
        for (t, &time) in times.iter().enumerate() {
            let v = prior.mean_fn.eval(time, d);
            check_dim("GP prior mean function output", d, v.len())?;
            m0.row_mut(t).copy_from(&v.transpose());
        }
        let k0_inv_m0 = &q * Matrix::from_diagonal(&kernel_eigs.map(|x| 1.0 / x)) * q.transpose() * &m0;
        let prior_pull = k0_inv_m0 * prior.omega0.inverse_matrix();

        let mean = row_sum(returns) / n as f64;
        let centered = Matrix::from_fn(n, d, |t, j| returns[(t, j)] - mean[j]);
        Ok(Self {
            n,
            d,
            y: returns.clone(),
            q: Arc::new(q),
            kernel_eigs,
            omega0_chol: prior.omega0.cholesky_l(),
            log_det_omega0: prior.omega0.log_det(),
            m0,
            prior_pull,
            psi0_inv: prior.psi0.inverse_matrix(),
            initial_scatter: centered.transpose() * centered,
            prior,
        })
    }

    pub fn prior(&self) -> &GpPrior {
        &self.prior
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn nu_post(&self) -> f64 {
        self.n as f64 + self.prior.nu0 + 1.0
    }

    /// Factor of the stacked mean path given `W = E[Λ]` and the predictive mean.
    fn mu_factor(&self, w: &Matrix, xi_y: &Vector) -> Result<(Vector, GpPosteriorCovariance)> {
        let l = &self.omega0_chol;
        let inner = crate::linalg::symmetrize(&(l.transpose() * w * l));
        let eig = SymmetricEigen::new(inner);
        let b = l * &eig.eigenvectors;
        let e = eig.eigenvalues;
        if e.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::NotPositiveDefinite("E[Λ] in the GP mean factor".into()));
        }
        let s = Matrix::from_fn(self.n + 1, self.d, |k, j| {
            let dk = self.kernel_eigs[k];
            dk / (1.0 + dk * e[j])
        });

        let mut y_ext = Matrix::zeros(self.n + 1, self.d);
        y_ext.rows_mut(0, self.n).copy_from(&self.y);
        y_ext.row_mut(self.n).copy_from(&xi_y.transpose());
        let rhs = y_ext * w + &self.prior_pull;
        let z = self.q.transpose() * rhs * &b;
        let z = z.component_mul(&s);
        let mean_path = &*self.q * z * b.transpose();
        let m = Vector::from_iterator(mean_path.len(), mean_path.transpose().iter().copied());
        Ok((
            m,
            GpPosteriorCovariance::new(self.q.clone(), b, s, self.log_det_omega0),
        ))
    }

    fn mean_path(&self, m: &Vector) -> Matrix {
        Matrix::from_row_slice(self.n + 1, self.d, m.as_slice())
    }

    fn inverse_scale(
        &self,
        xi_y: &Vector,
        lambda_y: &SpdMatrix,
        m: &Vector,
        cov: &GpPosteriorCovariance,
    ) -> Matrix {
        let path = self.mean_path(m);
        let mut y_ext = Matrix::zeros(self.n + 1, self.d);
        y_ext.rows_mut(0, self.n).copy_from(&self.y);
        y_ext.row_mut(self.n).copy_from(&xi_y.transpose());
        let resid = y_ext - path;
        let mut out = &self.psi0_inv + resid.transpose() * resid + lambda_y.inverse_matrix();
        for t in 0..=self.n {
            out += cov.block(t);
        }
        crate::linalg::symmetrize(&out)
    }
}

impl VariationalModel for GpModel {
    type State = GpState;

    fn dim(&self) -> usize {
        self.d
    }

    fn initial_state(&self) -> Result<GpState> {
        let nu = self.nu_post();
        let psi =
            SpdMatrix::named(&self.psi0_inv + &self.initial_scatter, "initial Wishart scale")?.inverse();
        let w = psi.as_matrix() * nu;
        let xi_y = row_sum(&self.y) / self.n as f64;
        let (m_mu, cov_mu) = self.mu_factor(&w, &xi_y)?;
        Ok(GpState {
            xi_y,
            lambda_y: SpdMatrix::named(w, "Λ_y")?,
            m_mu,
            cov_mu,
            nu_lambda: nu,
            psi_lambda: psi,
        })
    }

    fn fixed_point_step(&self, state: &GpState, delta: &Vector, lambda: f64) -> Result<GpState> {
        check_step_inputs(self.d, delta, lambda)?;
        let nu = state.nu_lambda;
        let w = state.psi_lambda.as_matrix() * nu;
        let w_inv = state.psi_lambda.inverse_matrix() / nu;

        let xi_y = state.mean_at(self.n) - &w_inv * delta * lambda;
        let lambda_y = SpdMatrix::named(w.clone(), "Λ_y")?;
        let (m_mu, cov_mu) = self.mu_factor(&w, &xi_y)?;
        let nu_lambda = self.nu_post();
        let inv_scale = self.inverse_scale(&xi_y, &lambda_y, &m_mu, &cov_mu);
        let psi_lambda = SpdMatrix::named(inv_scale, "ψ_Λ update")
            .map_err(|_| Error::Singular("ψ_Λ update (degenerate data)".into()))?
            .inverse();

        Ok(GpState {
            xi_y,
            lambda_y,
            m_mu,
            cov_mu,
            nu_lambda,
            psi_lambda,
        })
    }

    fn objective(&self, state: &GpState, delta: &Vector, lambda: f64) -> Result<f64> {
        check_step_inputs(self.d, delta, lambda)?;
        let inv_scale = self.inverse_scale(&state.xi_y, &state.lambda_y, &state.m_mu, &state.cov_mu);
        let trace_term = (inv_scale * state.psi_lambda.as_matrix()).trace();

        // Tr(P₀ C) in the diagonalizing basis is Σ s_kj / D_k.
        let s = &state.cov_mu.s;
        let trace_prior_cov: f64 = (0..s.nrows()).map(|k| s.row(k).sum() / self.kernel_eigs[k]).sum();
        // (m - m₀)ᵀ P₀ (m - m₀) with P₀ = K₀⁻¹ ⊗ Ω₀⁻¹, via the eigenbasis of K₀.
        let dev = self.mean_path(&state.m_mu) - &self.m0;
        let rot = self.q.transpose() * &dev;
        let l_inv_rot_t = self
            .omega0_chol
            .solve_lower_triangular(&rot.transpose())
            .expect("Cholesky factor has a positive diagonal");
        let quad_prior: f64 = (0..rot.nrows())
            .map(|k| l_inv_rot_t.column(k).norm_squared() / self.kernel_eigs[k])
            .sum();
        let coef = 0.5 * (self.n as f64 + self.prior.nu0 + 1.0);

        Ok(
            -0.5 * state.nu_lambda * trace_term - 0.5 * (trace_prior_cov + quad_prior)
                + coef * state.psi_lambda.log_det()
                - 0.5 * state.lambda_y.log_det()
                + 0.5 * state.cov_mu.log_det()
                - lambda * delta.dot(&state.xi_y),
        )
    }

    fn residual(&self, prev: &GpState, next: &GpState) -> f64 {
        let blocks = (0..=self.n)
            .map(|t| scaled_change(prev.cov_mu.block(t), next.cov_mu.block(t)))
            .fold(0.0, f64::max);
        [
            scaled_change_vec(&prev.xi_y, &next.xi_y),
            scaled_change(prev.lambda_y.as_matrix(), next.lambda_y.as_matrix()),
            scaled_change_vec(&prev.m_mu, &next.m_mu),
            blocks,
            (prev.nu_lambda - next.nu_lambda).abs() / next.nu_lambda.abs().max(1.0),
            scaled_change(prev.psi_lambda.as_matrix(), next.psi_lambda.as_matrix()),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn predictive_mean<'a>(&self, state: &'a GpState) -> &'a Vector {
        &state.xi_y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, max_abs_diff};
    use crate::models::envelope_gradient;
    use crate::models::testutil::{converge, fd_gradient, returns};

    fn prior(d: usize, gamma: f64) -> GpPrior {
        GpPrior {
            mean_fn: MeanFunction::Zero,
            gamma,
            omega0: SpdMatrix::identity(d),
            nu0: d as f64,
            psi0: SpdMatrix::scaled_identity(d, 10.0).unwrap(),
        }
    }

    /// Dense time-major factor computed by brute force.
    fn dense_factor(model: &GpModel, w: &Matrix, xi_y: &Vector) -> (Vector, Matrix) {
        let n1 = model.n + 1;
        let times: Vec<f64> = (1..=n1).map(|t| t as f64).collect();
        let k0 = rbf_gram(&times, model.prior.gamma).unwrap();
        let p0 = kron(&k0.inverse_matrix(), &model.prior.omega0.inverse_matrix());
        let precision = kron(&Matrix::identity(n1, n1), w) + &p0;
        let cov = SpdMatrix::new(precision).unwrap().inverse_matrix();
        let mut r = Vector::zeros(n1 * model.d);
        for t in 0..n1 {
            let y_t: Vector = if t < model.n {
                model.y.row(t).transpose()
            } else {
                xi_y.clone()
            };
            r.rows_mut(t * model.d, model.d).copy_from(&(w * y_t));
        }
        let m0 = Vector::from_iterator(n1 * model.d, model.m0.transpose().iter().copied());
        r += &p0 * m0;
        (&cov * r, cov)
    }

    #[test]
    fn structured_factor_matches_dense_solve() {
        let y = returns(6, 2, 31);
        let mut p = prior(2, 1.7);
        p.omega0 = SpdMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
        p.mean_fn = MeanFunction::Constant(Vector::from_column_slice(&[0.05, -0.02]));
        let model = GpModel::new(&y, p).unwrap();
        let w = Matrix::from_row_slice(2, 2, &[40.0, -5.0, -5.0, 25.0]);
        let xi_y = Vector::from_column_slice(&[0.1, 0.0]);
        let (m, cov) = model.mu_factor(&w, &xi_y).unwrap();
        let (m_dense, cov_dense) = dense_factor(&model, &w, &xi_y);
        assert!((&m - &m_dense).amax() < 1e-9 * m_dense.amax().max(1.0));
        assert!(max_abs_diff(&cov.to_dense(), &cov_dense) < 1e-9);
        let ld = SpdMatrix::new(cov_dense.clone()).unwrap().log_det();
        assert!((cov.log_det() - ld).abs() < 1e-6 * ld.abs().max(1.0));
        for t in 0..7 {
            let block = cov_dense.view((2 * t, 2 * t), (2, 2)).into_owned();
            assert!(max_abs_diff(cov.block(t), &block) < 1e-10);
        }
    }

    #[test]
    fn zero_lambda_prediction_is_path_endpoint() {
        let y = returns(8, 2, 32);
        let model = GpModel::new(&y, prior(2, 2.0)).unwrap();
        let s = converge(&model, &Vector::from_element(2, 0.5), 0.0, 1e-14);
        assert!((&s.xi_y - s.mean_at(8)).amax() < 1e-12);
        assert_eq!(s.nu_lambda, 8.0 + 2.0 + 1.0);
    }

    #[test]
    fn wide_kernel_gives_flat_path() {
        let y = Matrix::from_column_slice(2, 1, &[0.3, -0.2]);
        let model = GpModel::new(&y, prior(1, 1e4)).unwrap();
        let s = converge(&model, &Vector::from_element(1, 1.0), 0.0, 1e-14);
        let path: Vec<f64> = s.m_mu.iter().copied().collect();
        for v in &path {
            assert!((v - path[0]).abs() < 1e-6, "{path:?}");
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let y = returns(10, 3, 33);
        let model = GpModel::new(&y, prior(3, 3.0)).unwrap();
        let delta = Vector::from_column_slice(&[0.6, 0.1, 0.3]);
        let lambda = 2.5;
        let s = converge(&model, &delta, lambda, 1e-14);
        let g = envelope_gradient(&model, &s, &delta, lambda, 1e-10).unwrap();
        let fd = fd_gradient(&model, &delta, lambda, 1e-5);
        assert!((&g - &fd).norm() <= 1e-4 * fd.norm(), "{g} vs {fd}");
    }

    /// Scalar evidence lower bound with dense covariance, term by term.
    fn scalar_elbo(model: &GpModel, s: &GpState, delta: f64, lambda: f64) -> f64 {
        let n = model.n;
        let cov = s.cov_mu.to_dense();
        let m = &s.m_mu;
        let (ly, nu, psi) = (
            s.lambda_y.as_matrix()[(0, 0)],
            s.nu_lambda,
            s.psi_lambda.as_matrix()[(0, 0)],
        );
        let mut scatter = 1.0 / ly + (s.xi_y[0] - m[n]).powi(2) + cov[(n, n)];
        for t in 0..n {
            scatter += (model.y[(t, 0)] - m[t]).powi(2) + cov[(t, t)];
        }
        let likelihood = 0.5 * (n as f64 + 1.0) * psi.ln() - 0.5 * nu * psi * scatter;
        let times: Vec<f64> = (1..=n + 1).map(|t| t as f64).collect();
        let k_inv = rbf_gram(&times, model.prior.gamma).unwrap().inverse_matrix()
            / model.prior.omega0.as_matrix()[(0, 0)];
        let prior_mu = -0.5 * ((&k_inv * &cov).trace() + m.dot(&(&k_inv * m)));
        let psi0 = model.prior.psi0.as_matrix()[(0, 0)];
        let prior_lambda = 0.5 * (model.prior.nu0 - 2.0) * psi.ln() - 0.5 * nu * psi / psi0;
        let entropy = -0.5 * ly.ln() + 0.5 * SpdMatrix::new(cov).unwrap().log_det() + psi.ln();
        likelihood + prior_mu + prior_lambda + entropy - lambda * delta * s.xi_y[0]
    }

    #[test]
    fn scalar_objective_matches_term_by_term_elbo() {
        let y = Matrix::from_column_slice(2, 1, &[0.2, -0.1]);
        let model = GpModel::new(&y, prior(1, 1.5)).unwrap();
        let one = Vector::from_element(1, 1.0);
        let s1 = converge(&model, &one, 1.2, 1e-14);
        let s2 = model
            .fixed_point_step(&model.initial_state().unwrap(), &(&one * 4.0), 1.0)
            .unwrap();
        let lib = model.objective(&s1, &one, 1.2).unwrap() - model.objective(&s2, &one, 1.2).unwrap();
        let oracle = scalar_elbo(&model, &s1, 1.0, 1.2) - scalar_elbo(&model, &s2, 1.0, 1.2);
        assert!((lib - oracle).abs() < 1e-8, "{lib} vs {oracle}");
    }
}
