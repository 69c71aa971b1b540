//! Gibbs-sampling reference solver.
//!
//! A Gibbs chain over the model parameters is drawn once per solve (its
//! draws do not depend on the decision). Each outer iteration then draws one
//! tilted predictive sample per retained parameter draw, averages them into a
//! stochastic gradient `-λ z̄`, and takes a projected step.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, row, row_sum, unvec, vec, Matrix, SpdMatrix, Vector};
use crate::models::{ArPrior, GwPrior};
use crate::sampling::{
    sample_mvn_chol, sample_mvn_precision, sample_wishart, standard_normal_vector, RngSeed,
};
use crate::simplex::DecisionSet;
use crate::vb::SolveReport;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Total Gibbs draws `M`, burn-in included.
    pub m_samples: usize,
    /// Discarded leading draws; `None` means `M / 10`.
    pub burn_in: Option<usize>,
    pub eta: f64,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub decision_set: DecisionSet,
    pub seed: RngSeed,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            m_samples: 20_000,
            burn_in: None,
            eta: 0.1,
            max_outer: 1000,
            outer_tol: 1e-8,
            decision_set: DecisionSet::Simplex,
            seed: RngSeed(0),
        }
    }
}

impl McmcConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.m_samples / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_samples == 0 {
            return Err(Error::InvalidParameter("m_samples must be at least 1".into()));
        }
        if self.burn_in() >= self.m_samples {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be smaller than the number of draws {}",
                self.burn_in(),
                self.m_samples
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if self.max_outer == 0 || !(self.outer_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "max_outer and outer_tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One Gaussian–Wishart parameter draw.
#[derive(Debug, Clone)]
pub struct GwDraw {
    pub mu: Vector,
    pub lambda: SpdMatrix,
}

/// One autoregressive parameter draw.
#[derive(Debug, Clone)]
pub struct ArDraw {
    pub gamma: Matrix,
    pub lambda: SpdMatrix,
}

/// Stationarity smoke test of a chain.
#[derive(Debug, Clone)]
pub struct ChainDiagnostics {
    /// Always 1: Gibbs updates are never rejected.
    pub acceptance: f64,
    pub parameter_means: Vector,
    /// Largest `|mean(first half) − mean(second half)|` over parameters, in
    /// units of its batch-means standard error.
    pub split_half_discrepancy: f64,
}

/// Split-half diagnostics of a chain of parameter vectors.
pub fn chain_diagnostics(chain: &[Vector]) -> Result<ChainDiagnostics> {
    let len = chain.len();
    if len < 40 {
        return Err(Error::InsufficientData(format!(
            "chain diagnostics need at least 40 draws, got {len}"
        )));
    }
    let p = chain[0].len();
    let mean_of = |xs: &[Vector]| xs.iter().fold(Vector::zeros(p), |acc, x| acc + x) / xs.len() as f64;
    let half = len / 2;
    let (first, second) = (&chain[..half], &chain[half..2 * half]);
    let diff = mean_of(first) - mean_of(second);

    // Batch means: 10 batches per half.
    let batches = 10;
    let size = half / batches;
    let mut worst = 0.0f64;
    for j in 0..p {
        let mut variance = 0.0;
        for part in [first, second] {
            let bm: Vec<f64> = (0..batches)
                .map(|b| part[b * size..(b + 1) * size].iter().map(|x| x[j]).sum::<f64>() / size as f64)
                .collect();
            let m = bm.iter().sum::<f64>() / batches as f64;
            let var_b = bm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
            variance += var_b / batches as f64;
        }
        let z = if variance > 0.0 {
            diff[j].abs() / variance.sqrt()
        } else if diff[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    Ok(ChainDiagnostics {
        acceptance: 1.0,
        parameter_means: mean_of(chain),
        split_half_discrepancy: worst,
    })
}

fn check_chain_lengths(m: usize, burn_in: usize) -> Result<()> {
    if m == 0 || burn_in >= m {
        return Err(Error::InvalidParameter(format!(
            "need burn-in ({burn_in}) < draws ({m})"
        )));
    }
    Ok(())
}

/// Sufficient statistics of the i.i.d. model.
struct GwStats {
    n: f64,
    sum: Vector,
    sum_sq: Matrix,
}

impl GwStats {
    fn new(y: &Matrix) -> Self {
        Self {
            n: y.nrows() as f64,
            sum: row_sum(y),
            sum_sq: y.transpose() * y,
        }
    }

    /// `Σ (Y_t − μ)(Y_t − μ)ᵀ`.
    fn scatter(&self, mu: &Vector) -> Matrix {
        let cross = &self.sum * mu.transpose();
        &self.sum_sq - &cross - cross.transpose() + mu * mu.transpose() * self.n
    }
}

/// Full conditional of `μ` given `Λ`: returns `(mean, precision)` with
/// precision `nΛ + Λ₀` and mean `(nΛ + Λ₀)⁻¹(ΛΣY_t + Λ₀μ₀)`.
pub fn gw_mu_conditional(y: &Matrix, prior: &GwPrior, lambda: &SpdMatrix) -> Result<(Vector, SpdMatrix)> {
    let stats = GwStats::new(y);
    gw_mu_conditional_stats(&stats, prior, lambda)
}

fn gw_mu_conditional_stats(
    stats: &GwStats,
    prior: &GwPrior,
    lambda: &SpdMatrix,
) -> Result<(Vector, SpdMatrix)> {
    let l0 = prior.lambda0.as_matrix();
    let precision = SpdMatrix::named(lambda.as_matrix() * stats.n + l0, "μ conditional precision")?;
    let mean = precision.solve_vec(&(lambda.as_matrix() * &stats.sum + l0 * &prior.mu0));
    Ok((mean, precision))
}

/// Degrees of freedom and scale of the full conditional of `Λ` given the
/// residual scatter: `W(n + ν₀, (ψ₀⁻¹ + scatter)⁻¹)`.
fn lambda_conditional(
    n: f64,
    prior_nu0: f64,
    psi0_inv: &Matrix,
    scatter: &Matrix,
) -> Result<(f64, SpdMatrix)> {
    let inv = SpdMatrix::named(
        crate::linalg::symmetrize(&(psi0_inv + scatter)),
        "Λ conditional scale",
    )
    .map_err(|_| Error::Singular("Λ conditional scale (degenerate data)".into()))?;
    Ok((n + prior_nu0, inv.inverse()))
}

/// Gibbs sampler for the Gaussian–Wishart model. Runs `m` sweeps and returns
/// the `m − burn_in` retained draws.
pub fn gibbs_gw(y: &Matrix, prior: &GwPrior, m: usize, burn_in: usize, seed: RngSeed) -> Result<Vec<GwDraw>> {
    crate::models::GwModel::new(y, prior.clone())?;
    check_chain_lengths(m, burn_in)?;
    let stats = GwStats::new(y);
    let psi0_inv = prior.psi0.inverse_matrix();
    let mut rng = seed.rng();
    let mut mu = &stats.sum / stats.n;
    let mut out = Vec::with_capacity(m - burn_in);
    for it in 0..m {
        let (nu, psi) = lambda_conditional(stats.n, prior.nu0, &psi0_inv, &stats.scatter(&mu))?;
        let lambda = sample_wishart(nu, &psi, &mut rng)?;
        let (mean, precision) = gw_mu_conditional_stats(&stats, prior, &lambda)?;
        mu = sample_mvn_precision(&mean, &precision, &mut rng);
        if it >= burn_in {
            out.push(GwDraw {
                mu: mu.clone(),
                lambda,
            });
        }
    }
    Ok(out)
}

struct ArStats {
    n: f64,
    /// `G_n = Σ_{t=1}^{n} Y_{t−1}Y_{t−1}ᵀ`.
    lagged_gram: Matrix,
    /// `Σ_{t=1}^{n} Y_t Y_{t−1}ᵀ`.
    cross: Matrix,
    /// `Σ_{t=1}^{n} Y_t Y_tᵀ`.
    target_gram: Matrix,
}

impl ArStats {
    fn new(y: &Matrix) -> Result<Self> {
        if y.nrows() < 2 {
            return Err(Error::InsufficientData(
                "AR sampler needs at least one transition".into(),
            ));
        }
        let n = y.nrows() - 1;
        let lagged = y.rows(0, n);
        let targets = y.rows(1, n);
        Ok(Self {
            n: n as f64,
            lagged_gram: lagged.transpose() * lagged,
            cross: targets.transpose() * lagged,
            target_gram: targets.transpose() * targets,
        })
    }

    fn scatter(&self, gamma: &Matrix) -> Matrix {
        let gc = gamma * self.cross.transpose();
        &self.target_gram - &gc - gc.transpose() + gamma * &self.lagged_gram * gamma.transpose()
    }
}

/// Full conditional of `vec Γ` given `Λ`: precision `G_n ⊗ Λ + (V₀ ⊗ U₀)⁻¹`
/// and mean `precision⁻¹ (vec(Λ Σ Y_t Y_{t−1}ᵀ) + (V₀ ⊗ U₀)⁻¹ vec M₀)`.
pub fn ar_gamma_conditional(y: &Matrix, prior: &ArPrior, lambda: &SpdMatrix) -> Result<(Matrix, SpdMatrix)> {
    let stats = ArStats::new(y)?;
    let p0 = kron(&prior.v0.inverse_matrix(), &prior.u0.inverse_matrix());
    ar_gamma_conditional_stats(&stats, prior, &p0, lambda)
}

fn ar_gamma_conditional_stats(
    stats: &ArStats,
    prior: &ArPrior,
    p0: &Matrix,
    lambda: &SpdMatrix,
) -> Result<(Matrix, SpdMatrix)> {
    let d = prior.dim();
    let precision = SpdMatrix::named(
        kron(&stats.lagged_gram, lambda.as_matrix()) + p0,
        "Γ conditional precision",
    )?;
    let rhs = vec(&(lambda.as_matrix() * &stats.cross)) + p0 * vec(&prior.m0);
    let mean = precision.solve_vec(&rhs);
    Ok((unvec(&mean, d, d)?, precision))
}

/// Gibbs sampler for the autoregressive model (rows `Y_0..Y_n`).
pub fn gibbs_ar(y: &Matrix, prior: &ArPrior, m: usize, burn_in: usize, seed: RngSeed) -> Result<Vec<ArDraw>> {
    crate::models::ArModel::new(y, prior.clone())?;
    check_chain_lengths(m, burn_in)?;
    let stats = ArStats::new(y)?;
    let d = prior.dim();
    let psi0_inv = prior.psi0.inverse_matrix();
    let p0 = kron(&prior.v0.inverse_matrix(), &prior.u0.inverse_matrix());
    let mut rng = seed.rng();
    let mut gamma = prior.m0.clone();
    let mut out = Vec::with_capacity(m - burn_in);
    for it in 0..m {
        let (nu, psi) = lambda_conditional(stats.n, prior.nu0, &psi0_inv, &stats.scatter(&gamma))?;
        let lambda = sample_wishart(nu, &psi, &mut rng)?;
        let (mean, precision) = ar_gamma_conditional_stats(&stats, prior, &p0, &lambda)?;
        gamma = unvec(&sample_mvn_precision(&vec(&mean), &precision, &mut rng), d, d)?;
        if it >= burn_in {
            out.push(ArDraw {
                gamma: gamma.clone(),
                lambda,
            });
        }
    }
    Ok(out)
}

/// Predictive distribution `N(mean, Σ)` of `Y_{n+1}` under one parameter draw.
#[derive(Debug, Clone)]
pub struct PredictiveGaussian {
    pub mean: Vector,
    pub cov: Matrix,
    chol: Matrix,
}

impl PredictiveGaussian {
    pub fn new(mean: Vector, cov: SpdMatrix) -> Self {
        let chol = cov.cholesky_l();
        Self {
            mean,
            cov: cov.into_matrix(),
            chol,
        }
    }

    pub fn from_gw(draw: &GwDraw) -> Self {
        Self::new(draw.mu.clone(), draw.lambda.inverse())
    }

    pub fn from_ar(draw: &ArDraw, last: &Vector) -> Self {
        Self::new(&draw.gamma * last, draw.lambda.inverse())
    }

    /// Mean of the tilted predictive, `mean − λΣδ`.
    pub fn tilted_mean(&self, delta: &Vector, lambda: f64) -> Vector {
        &self.mean - &self.cov * delta * lambda
    }
}

/// Draw from the predictive tilted by `exp(−λδᵀY)`: `N(mean − λΣδ, Σ)`.
pub fn breve_sample<R: Rng + ?Sized>(
    pred: &PredictiveGaussian,
    delta: &Vector,
    lambda: f64,
    rng: &mut R,
) -> Vector {
    sample_mvn_chol(&pred.tilted_mean(delta, lambda), &pred.chol, rng)
}

#[derive(Debug, Clone)]
pub enum McmcPrior {
    Gw(GwPrior),
    Ar(ArPrior),
}

#[derive(Debug, Clone)]
pub struct McmcReport {
    pub report: SolveReport,
    pub diagnostics: ChainDiagnostics,
}

/// Stochastic projected gradient solver driven by Gibbs draws.
///
/// The average of one tilted draw per retained parameter draw has the same
/// distribution as `mean(tilted means) + N(0, Σ_k Σ_k / K²)`, so each outer
/// iteration draws that single Gaussian instead of `K` separate ones.
pub fn mcmc_solve(y: &Matrix, prior: &McmcPrior, lambda: f64, config: &McmcConfig) -> Result<McmcReport> {
    config.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid risk aversion {lambda}")));
    }
    let started = Instant::now();
    let burn_in = config.burn_in();
    let (preds, chain): (Vec<PredictiveGaussian>, Vec<Vector>) = match prior {
        McmcPrior::Gw(p) => {
            let draws = gibbs_gw(y, p, config.m_samples, burn_in, config.seed)?;
            let chain = draws.iter().map(|s| stack(&s.mu, &s.lambda)).collect();
            (draws.iter().map(PredictiveGaussian::from_gw).collect(), chain)
        }
        McmcPrior::Ar(p) => {
            let draws = gibbs_ar(y, p, config.m_samples, burn_in, config.seed)?;
            let last = row(y, y.nrows() - 1);
            let chain = draws.iter().map(|s| stack(&vec(&s.gamma), &s.lambda)).collect();
            (
                draws
                    .iter()
                    .map(|s| PredictiveGaussian::from_ar(s, &last))
                    .collect(),
                chain,
            )
        }
    };
    let diagnostics = if chain.len() >= 40 {
        chain_diagnostics(&chain)?
    } else {
        ChainDiagnostics {
            acceptance: 1.0,
            parameter_means: chain.iter().fold(Vector::zeros(chain[0].len()), |a, x| a + x)
                / chain.len() as f64,
            split_half_discrepancy: 0.0,
        }
    };

    let k = preds.len() as f64;
    let d = y.ncols();
    let mean_pred = preds.iter().fold(Vector::zeros(d), |a, p| a + &p.mean) / k;
    let mean_cov = preds.iter().fold(Matrix::zeros(d, d), |a, p| a + &p.cov) / k;
    let noise_chol = SpdMatrix::named(&mean_cov / k, "averaged predictive covariance")?.cholesky_l();

    let log_risk = |delta: &Vector| -> f64 {
        let terms: Vec<f64> = preds
            .iter()
            .map(|p| -lambda * delta.dot(&p.mean) + 0.5 * lambda * lambda * delta.dot(&(&p.cov * delta)))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + (terms.iter().map(|t| (t - max).exp()).sum::<f64>() / k).ln()
    };

    let set = config.decision_set;
    let mut rng = config.seed.rng_stream(1);
    let mut delta = set.initial_point(d);
    let mut objective_trace = vec![log_risk(&delta)];
    let mut converged = false;
    let mut outer_iters = 0;
    for it in 1..=config.max_outer {
        outer_iters = it;
        let z_bar =
            &mean_pred - &mean_cov * &delta * lambda + &noise_chol * standard_normal_vector(d, &mut rng);
        let eta = if it > 100 {
            config.eta * (100.0 / it as f64).sqrt()
        } else {
            config.eta
        };
        let next = set.project(&(&delta + z_bar * (eta * lambda)))?;
        let norm = next.norm();
        if !norm.is_finite() || norm > 1e3 {
            return Err(Error::Diverged { iteration: it, norm });
        }
        let moved = (&next - &delta).norm();
        delta = next;
        objective_trace.push(log_risk(&delta));
        if moved < config.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(McmcReport {
        report: SolveReport {
            decision: delta,
            objective_trace,
            inner_residual_trace: Vec::new(),
            outer_iters,
            converged,
            wall_time: started.elapsed().as_secs_f64(),
            seed: config.seed,
        },
        diagnostics,
    })
}

fn stack(v: &Vector, lambda: &SpdMatrix) -> Vector {
    let diag = lambda.as_matrix().diagonal();
    Vector::from_iterator(v.len() + diag.len(), v.iter().chain(diag.iter()).copied())
}
