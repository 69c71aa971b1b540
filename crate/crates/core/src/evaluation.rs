//! Out-of-sample metrics, the VB-versus-MCMC consistency experiment and the
//! inner-iteration study.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ar_truth, gw_truth, SyntheticTruth};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdMatrix, Vector};
use crate::mcmc::{mcmc_solve, McmcConfig, McmcPrior};
use crate::models::{ArModel, ArPrior, GwModel, GwPrior, VariationalModel};
use crate::sampling::RngSeed;
use crate::simplex::DecisionSet;
use crate::vb::{alg_vb, solve_inner, SolverConfig, StepSize};

fn check_dims(delta: &Vector, test: &Matrix) -> Result<()> {
    if delta.len() != test.ncols() {
        return Err(Error::Dimension {
            context: "decision vs test columns",
            expected: test.ncols(),
            found: delta.len(),
        });
    }
    if test.nrows() == 0 {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    Ok(())
}

/// Per-period strategy returns `δᵀy_t`.
pub fn strategy_returns(delta: &Vector, test: &Matrix) -> Result<Vector> {
    check_dims(delta, test)?;
    Ok(test * delta)
}

/// Population (`1/n`) standard deviation.
pub fn population_std(x: &Vector) -> f64 {
    let mean = x.mean();
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn cumsum(x: &Vector) -> Vector {
    let mut acc = 0.0;
    x.map(|v| {
        acc += v;
        acc
    })
}

/// Partial sums of `δᵀy_t`, optionally divided by the standard deviation of
/// the per-period returns.
pub fn cumulative_wealth(delta: &Vector, test: &Matrix, rescale: bool) -> Result<Vector> {
    let r = strategy_returns(delta, test)?;
    let path = cumsum(&r);
    if !rescale {
        return Ok(path);
    }
    let sd = population_std(&r);
    if sd == 0.0 {
        return Err(Error::InvalidParameter(
            "cannot rescale wealth: strategy returns have zero variance".into(),
        ));
    }
    Ok(path / sd)
}

/// Column with the largest final (unscaled) cumulative return; the first
/// wins ties.
pub fn best_index(test: &Matrix) -> usize {
    let totals = test.row_sum();
    (0..totals.len()).fold(0, |best, j| if totals[j] > totals[best] { j } else { best })
}

/// Cumulative wealth of the best index in hindsight minus that of `delta`,
/// divided by the standard deviation of the per-period differences. A
/// zero-variance difference is reported unscaled (all zeros when `delta`
/// is the best index).
pub fn regret_vs_hindsight(delta: &Vector, test: &Matrix) -> Result<Vector> {
    check_dims(delta, test)?;
    let diff = test.column(best_index(test)) - test * delta;
    let path = cumsum(&diff);
    let sd = population_std(&diff);
    Ok(if sd == 0.0 { path } else { path / sd })
}

/// `√12 · mean / std` of the per-period strategy returns (population std).
pub fn sharpe_annualized(delta: &Vector, test: &Matrix) -> Result<f64> {
    let r = strategy_returns(delta, test)?;
    if r.len() < 2 {
        return Err(Error::InsufficientData(
            "Sharpe ratio needs at least 2 periods".into(),
        ));
    }
    let sd = population_std(&r);
    if sd == 0.0 {
        return Err(Error::InvalidParameter(
            "Sharpe ratio undefined: zero variance".into(),
        ));
    }
    Ok(12f64.sqrt() * r.mean() / sd)
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub strategy: String,
    pub weights: Vector,
    pub cumulative_wealth_path: Vector,
    pub regret_path: Vector,
    pub sharpe_annualized: f64,
}

/// All metrics of one strategy on a test set.
pub fn backtest(strategy: &str, delta: &Vector, test: &Matrix) -> Result<BacktestResult> {
    Ok(BacktestResult {
        strategy: strategy.to_string(),
        weights: delta.clone(),
        cumulative_wealth_path: cumulative_wealth(delta, test, true)?,
        regret_path: regret_vs_hindsight(delta, test)?,
        sharpe_annualized: sharpe_annualized(delta, test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticModel {
    Gw,
    Ar,
}

impl std::str::FromStr for SyntheticModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gw" => Ok(SyntheticModel::Gw),
            "ar" => Ok(SyntheticModel::Ar),
            _ => Err(Error::InvalidParameter(format!(
                "synthetic model must be gw or ar, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub model: SyntheticModel,
    pub ns: Vec<usize>,
    pub d: usize,
    pub reps: usize,
    pub lambda: f64,
    pub solver: SolverConfig,
    pub mcmc: McmcConfig,
    pub seed: RngSeed,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            model: SyntheticModel::Gw,
            ns: vec![50, 100, 200],
            d: 5,
            reps: 20,
            lambda: 1.0,
            solver: SolverConfig::default(),
            mcmc: McmcConfig::default(),
            seed: RngSeed(0),
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 repetitions, got {}",
                self.reps
            )));
        }
        if self.d == 0 || self.ns.is_empty() || self.ns.iter().any(|&n| n < 3) {
            return Err(Error::InvalidParameter("need d ≥ 1 and every n ≥ 3".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.solver.validate()?;
        self.mcmc.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub mean_norm: f64,
    /// Sample standard deviation over successful repetitions.
    pub std_norm: f64,
    pub reps_ok: usize,
    /// `"rep <r>: <error>"` for each failed repetition.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("n,mean_norm,std_norm,reps_ok\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{:?},{}\n",
                r.n, r.mean_norm, r.std_norm, r.reps_ok
            ));
        }
        out
    }
}

/// `‖δ_MCMC − δ_VB‖₂` for one synthetic dataset.
pub fn consistency_distance(
    y: &Matrix,
    model: SyntheticModel,
    config: &ConsistencyConfig,
    seed: RngSeed,
) -> Result<f64> {
    let solver = SolverConfig {
        lambda: config.lambda,
        ..config.solver.clone()
    };
    let mcmc = McmcConfig {
        seed,
        ..config.mcmc.clone()
    };
    let (vb, prior) = match model {
        SyntheticModel::Gw => {
            let prior = GwPrior::from_data(y)?;
            (
                alg_vb(&GwModel::new(y, prior.clone())?, &solver)?,
                McmcPrior::Gw(prior),
            )
        }
        SyntheticModel::Ar => {
            let prior = ArPrior::from_data(y)?;
            (
                alg_vb(&ArModel::new(y, prior.clone())?, &solver)?,
                McmcPrior::Ar(prior),
            )
        }
    };
    let mc = mcmc_solve(y, &prior, config.lambda, &mcmc)?;
    Ok((mc.report.decision - vb.decision).norm())
}

/// For each `n`, draws `reps` fresh datasets from the synthetic recipe and
/// records the distance between the sampling and variational decisions.
/// Repetitions run in parallel; failures are excluded and listed.
pub fn consistency_experiment(config: &ConsistencyConfig) -> Result<ConsistencyTable> {
    config.validate()?;
    let jobs: Vec<(usize, usize, usize)> = config
        .ns
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..config.reps).map(move |r| (i, n, r)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, n, r)| {
            let base = config.seed.derive((i * config.reps + r) as u64 * 3);
            let truth = match config.model {
                SyntheticModel::Gw => gw_truth(config.d, base),
                SyntheticModel::Ar => ar_truth(config.d),
            };
            let data = truth.generate(n, base.derive(1))?;
            consistency_distance(&data.returns, config.model, config, base.derive(2))
        })
        .collect();

    let rows = config
        .ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let chunk = &results[i * config.reps..(i + 1) * config.reps];
            let mut ok = Vec::new();
            let mut failures = Vec::new();
            for (r, res) in chunk.iter().enumerate() {
                match res {
                    Ok(v) => ok.push(*v),
                    Err(e) => failures.push(format!("rep {r}: {e}")),
                }
            }
            for f in &failures {
                log::warn!("consistency n={n}: {f}");
            }
            let k = ok.len() as f64;
            let mean = ok.iter().sum::<f64>() / k;
            let std = if ok.len() >= 2 {
                (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            ConsistencyRow {
                n,
                mean_norm: mean,
                std_norm: std,
                reps_ok: ok.len(),
                failures,
            }
        })
        .collect();
    Ok(ConsistencyTable { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerStudyConfig {
    pub d: usize,
    pub n: usize,
    pub lambda: f64,
    pub max_inners: Vec<usize>,
    /// Fixed outer step size.
    pub eta: f64,
    pub max_outer: usize,
    pub seed: RngSeed,
}

impl Default for InnerStudyConfig {
    fn default() -> Self {
        Self {
            d: 10,
            n: 100,
            lambda: 1.0,
            max_inners: vec![1, 3, 10, 200],
            eta: 10.0,
            max_outer: 300,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerStudyRow {
    pub max_inner: usize,
    pub final_gap: f64,
}

pub fn inner_study_csv(rows: &[InnerStudyRow]) -> String {
    let mut out = String::from("max_inner,final_gap\n");
    for r in rows {
        out.push_str(&format!("{},{:?}\n", r.max_inner, r.final_gap));
    }
    out
}

/// Runs the variational solver on synthetic i.i.d. data with every inner
/// solve capped at `max_inner` sweeps from a cold start, for a fixed outer
/// budget. The gap is the exact objective (inner loop run to convergence)
/// at the final decision minus the exact objective at the reference decision.
pub fn inner_iteration_study(config: &InnerStudyConfig) -> Result<Vec<InnerStudyRow>> {
    if config.max_inners.is_empty() || config.max_inners.contains(&0) {
        return Err(Error::InvalidParameter(
            "max_inner values must be at least 1".into(),
        ));
    }
    if config.d == 0 || config.n < 2 {
        return Err(Error::InvalidParameter("need d ≥ 1 and n ≥ 2".into()));
    }
    let truth = SyntheticTruth::Gw {
        mu: Vector::from_fn(config.d, |i, _| 0.05 * (i + 1) as f64 / config.d as f64),
        sigma: SpdMatrix::scaled_identity(config.d, 0.04)?,
    };
    let y = truth.generate(config.n, config.seed)?.returns;
    let model = GwModel::new(&y, GwPrior::from_data(&y)?)?;
    let exact = SolverConfig {
        lambda: config.lambda,
        max_inner: 100_000,
        inner_tol: 1e-13,
        max_outer: 20_000,
        outer_tol: 1e-12,
        ..SolverConfig::default()
    };
    let reference = alg_vb(&model, &exact)?;
    let exact_objective = |delta: &Vector| -> Result<f64> {
        let inner = solve_inner(&model, model.initial_state()?, delta, &exact)?;
        model.objective(&inner.state, delta, config.lambda)
    };
    let best = exact_objective(&reference.decision)?;

    config
        .max_inners
        .par_iter()
        .map(|&max_inner| {
            let capped = SolverConfig {
                lambda: config.lambda,
                step: StepSize::Fixed(config.eta),
                max_outer: config.max_outer,
                max_inner,
                inner_tol: 1e-13,
                outer_tol: 1e-14,
                decision_set: DecisionSet::Simplex,
                seed: config.seed,
                warm_start: false,
                require_inner_convergence: false,
                stall_tol: 0.0,
                stall_sweeps: 0,
            };
            let report = alg_vb(&model, &capped)?;
            Ok(InnerStudyRow {
                max_inner,
                final_gap: (exact_objective(&report.decision)? - best).max(0.0),
            })
        })
        .collect()
}
