//! Variational portfolio solver: inner fixed-point iterations alternating
//! with an outer projected gradient step on the decision.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::models::VariationalModel;
use crate::sampling::RngSeed;
use crate::simplex::DecisionSet;

/// Outer step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// Start at `initial`, halve whenever the objective would increase and
    /// double after each accepted step. Changes within rounding noise are
    /// settled by a local Lipschitz check on the gradient.
    Backtracking {
        initial: f64,
    },
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Backtracking { initial: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub step: StepSize,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub decision_set: DecisionSet,
    pub seed: RngSeed,
    /// Start each inner solve from the previous outer iterate's state.
    pub warm_start: bool,
    /// Fail when an inner solve hits `max_inner` above tolerance. When off,
    /// the unconverged state is used as is (inner-iteration studies).
    pub require_inner_convergence: bool,
    /// An inner solve whose best residual is below `stall_tol` but has not
    /// improved for `stall_sweeps` sweeps is at its rounding floor and is
    /// accepted. Ill-conditioned data (nearly collinear assets) puts that
    /// floor above `inner_tol`. `stall_sweeps = 0` disables the rule.
    pub stall_tol: f64,
    pub stall_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            step: StepSize::default(),
            max_outer: 1000,
            max_inner: 2000,
            inner_tol: 1e-8,
            outer_tol: 1e-8,
            decision_set: DecisionSet::Simplex,
            seed: RngSeed(0),
            warm_start: true,
            require_inner_convergence: true,
            stall_tol: 1e-6,
            stall_sweeps: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            ));
        }
        match self.step {
            StepSize::Fixed(eta) | StepSize::Backtracking { initial: eta } => {
                if !(eta > 0.0) || !eta.is_finite() {
                    return bad(format!("step size must be positive, got {eta}"));
                }
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        if !(self.inner_tol > 0.0) || !(self.outer_tol > 0.0) || !(self.stall_tol >= 0.0) {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub decision: Vector,
    /// Objective at each accepted iterate, starting with the initial decision.
    pub objective_trace: Vec<f64>,
    /// Final inner residual of each inner solve at an accepted iterate.
    pub inner_residual_trace: Vec<f64>,
    pub outer_iters: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    pub seed: RngSeed,
}

#[derive(Debug, Clone)]
pub struct InnerSolution<S> {
    pub state: S,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted by the stall rule rather than by `inner_tol`.
    pub stalled: bool,
}

/// Iterates the fixed-point operator from `start` until the scaled max-norm
/// change drops below `inner_tol`, the stall rule fires, or `max_inner`
/// sweeps have run.
pub fn solve_inner<M: VariationalModel>(
    model: &M,
    start: M::State,
    delta: &Vector,
    config: &SolverConfig,
) -> Result<InnerSolution<M::State>> {
    let mut state = start;
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=config.max_inner {
        let next = model.fixed_point_step(&state, delta, config.lambda)?;
        residual = model.residual(&state, &next);
        state = next;
        let done = residual < config.inner_tol;
        if residual < best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stalled =
            !done && config.stall_sweeps > 0 && since_best >= config.stall_sweeps && best < config.stall_tol;
        if done || stalled {
            if stalled {
                log::debug!("inner solve stalled at residual {best:.3e} after {it} sweeps");
            }
            return Ok(InnerSolution {
                state,
                residual,
                iterations: it,
                converged: true,
                stalled,
            });
        }
    }
    Ok(InnerSolution {
        state,
        residual,
        iterations: config.max_inner,
        converged: false,
        stalled: false,
    })
}

struct Evaluated<S> {
    state: S,
    objective: f64,
    residual: f64,
}

fn evaluate<M: VariationalModel>(
    model: &M,
    start: M::State,
    delta: &Vector,
    config: &SolverConfig,
    outer: usize,
) -> Result<Evaluated<M::State>> {
    let inner = solve_inner(model, start, delta, config)?;
    if !inner.converged && config.require_inner_convergence {
        return Err(Error::Inner {
            outer,
            source: Box::new(Error::NotConverged {
                residual: inner.residual,
                iterations: inner.iterations,
            }),
        });
    }
    let objective = model.objective(&inner.state, delta, config.lambda)?;
    Ok(Evaluated {
        state: inner.state,
        objective,
        residual: inner.residual,
    })
}

/// Smallest step before backtracking gives up.
const MIN_STEP: f64 = 1e-12;
/// Objective differences below this many ulps of its magnitude are rounding
/// noise and cannot decide a backtracking test on their own.
const NOISE_ULPS: f64 = 64.0;

/// Projected gradient descent on the variational objective, starting from the
/// uniform allocation. The gradient at each iterate is `-λ ξ_y` of the
/// converged inner state.
pub fn alg_vb<M: VariationalModel>(model: &M, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let started = Instant::now();
    let d = model.dim();
    let set = config.decision_set;
    let mut delta = set.initial_point(d);

    let wrap = |outer: usize, e: Error| match e {
        e @ Error::Inner { .. } => e,
        e => Error::Inner {
            outer,
            source: Box::new(e),
        },
    };

    let mut current = evaluate(model, model.initial_state()?, &delta, config, 0).map_err(|e| wrap(0, e))?;
    let mut objective_trace = vec![current.objective];
    let mut inner_residual_trace = vec![current.residual];
    let mut eta = match config.step {
        StepSize::Fixed(eta) => eta,
        StepSize::Backtracking { initial } => initial,
    };
    let mut converged = false;
    let mut outer_iters = 0;

    for k in 1..=config.max_outer {
        outer_iters = k;
        let grad = model.predictive_mean(&current.state) * (-config.lambda);
        let (next_delta, next) = loop {
            let candidate = set.project(&(&delta - &grad * eta))?;
            if matches!(config.step, StepSize::Backtracking { .. })
                && (&candidate - &delta).norm() < config.outer_tol
            {
                // Every shorter step also moves less than the tolerance.
                break (candidate, None);
            }
            let start = if config.warm_start {
                current.state.clone()
            } else {
                model.initial_state()?
            };
            let evaluated = evaluate(model, start, &candidate, config, k).map_err(|e| wrap(k, e))?;
            match config.step {
                StepSize::Fixed(_) => break (candidate, Some(evaluated)),
                StepSize::Backtracking { .. } => {
                    if accept_step(
                        &current,
                        &evaluated,
                        &delta,
                        &candidate,
                        eta,
                        config.lambda,
                        model,
                    ) {
                        eta *= 2.0;
                        break (candidate, Some(evaluated));
                    }
                    eta *= 0.5;
                    if eta < MIN_STEP {
                        return Err(Error::StepUnderflow(eta));
                    }
                }
            }
        };
        let Some(next) = next else {
            converged = true;
            break;
        };
        let moved = (&next_delta - &delta).norm();
        delta = next_delta;
        current = next;
        objective_trace.push(current.objective);
        inner_residual_trace.push(current.residual);
        if moved < config.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        decision: delta,
        objective_trace,
        inner_residual_trace,
        outer_iters,
        converged,
        wall_time: started.elapsed().as_secs_f64(),
        seed: config.seed,
    })
}

/// Backtracking test. A plain decrease is accepted. When the change is within
/// rounding noise the objective cannot tell, so the step is accepted only if
/// the gradient is `1/η`-Lipschitz between the two points, which by the
/// descent lemma still guarantees `f(c) ≤ f(δ) − ‖c − δ‖²/(2η)`.
fn accept_step<M: VariationalModel>(
    current: &Evaluated<M::State>,
    next: &Evaluated<M::State>,
    delta: &Vector,
    candidate: &Vector,
    eta: f64,
    lambda: f64,
    model: &M,
) -> bool {
    if next.objective <= current.objective {
        return true;
    }
    let noise = NOISE_ULPS * f64::EPSILON * current.objective.abs().max(1.0);
    if next.objective - current.objective > noise {
        return false;
    }
    let grad_change =
        (model.predictive_mean(&next.state) - model.predictive_mean(&current.state)).norm() * lambda;
    grad_change * eta <= (candidate - delta).norm()
}

/// `gap_k = obj_k − min(trace)`.
pub fn convergence_gap_trace(report: &SolveReport) -> Vec<f64> {
    let min = report
        .objective_trace
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    report.objective_trace.iter().map(|v| v - min).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, SpdMatrix};
    use crate::models::testutil::{converge, returns};
    use crate::models::{
        gg_exact_decision, ArModel, ArPrior, GgModel, GgPrior, GpModel, GpPrior, GwModel, GwPrior,
    };

    fn gw(n: usize, d: usize, salt: u64) -> GwModel {
        let y = returns(n, d, salt);
        GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap()
    }

    #[test]
    fn single_asset_simplex_is_immediate() {
        let model = gw(30, 1, 71);
        let report = alg_vb(&model, &SolverConfig::default()).unwrap();
        assert_eq!(report.decision.as_slice(), &[1.0]);
        assert!(report.outer_iters <= 1 && report.converged);
    }

    #[test]
    fn scalar_inner_solve_converges_quickly() {
        let model = gw(50, 1, 72);
        let config = SolverConfig {
            inner_tol: 1e-8,
            ..SolverConfig::default()
        };
        let sol = solve_inner(
            &model,
            model.initial_state().unwrap(),
            &Vector::from_element(1, 1.0),
            &config,
        )
        .unwrap();
        assert!(sol.converged && sol.iterations <= 500 && sol.residual < 1e-8);
        let again = model
            .fixed_point_step(&sol.state, &Vector::from_element(1, 1.0), 1.0)
            .unwrap();
        assert!(model.residual(&sol.state, &again) < 1e-8);
    }

    #[test]
    fn zero_lambda_inner_solve_equals_plain_cavi() {
        let model = gw(40, 3, 73);
        let delta = Vector::from_element(3, 1.0 / 3.0);
        let config = SolverConfig {
            lambda: 0.0,
            inner_tol: 1e-13,
            ..SolverConfig::default()
        };
        let sol = solve_inner(&model, model.initial_state().unwrap(), &delta, &config).unwrap();
        // Independent run: a different decision and no utility tilt.
        let plain = converge(&model, &Vector::from_column_slice(&[1.0, 0.0, 0.0]), 0.0, 1e-14);
        assert!((&sol.state.xi_mu - &plain.xi_mu).amax() < 1e-10);
    }

    #[test]
    fn matches_exact_gaussian_decision_on_rd() {
        let y = returns(20, 2, 74);
        let prior = GgPrior {
            mu0: Vector::from_column_slice(&[0.02, 0.01]),
            sigma0: SpdMatrix::scaled_identity(2, 0.5).unwrap(),
            sigma_star: SpdMatrix::new(Matrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03])).unwrap(),
        };
        let exact = gg_exact_decision(&y, &prior, 1.0, DecisionSet::Rd).unwrap();
        let model = GgModel::new(&y, prior).unwrap();
        let config = SolverConfig {
            decision_set: DecisionSet::Rd,
            step: StepSize::Fixed(20.0),
            max_outer: 100_000,
            outer_tol: 1e-12,
            inner_tol: 1e-14,
            ..SolverConfig::default()
        };
        let report = alg_vb(&model, &config).unwrap();
        assert!(report.converged);
        assert!(
            (&report.decision - &exact).norm() < 1e-6,
            "{} vs {}",
            report.decision,
            exact
        );
    }

    #[test]
    fn dominant_asset_attracts_the_mass() {
        let d = 8;
        let mut y = returns(200, d, 80);
        for t in 0..200 {
            y[(t, 3)] += 0.3;
        }
        let mut prior = GwPrior::from_data(&y).unwrap();
        prior.mu0 = Vector::zeros(d);
        let model = GwModel::new(&y, prior).unwrap();
        let report = alg_vb(
            &model,
            &SolverConfig {
                lambda: 0.1,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        assert!(report.decision[3] > 0.9, "{}", report.decision);
    }

    #[test]
    fn traces_are_monotone_and_feasible() {
        let model = gw(60, 4, 75);
        let report = alg_vb(
            &model,
            &SolverConfig {
                lambda: 5.0,
                ..SolverConfig::default()
            },
        )
        .unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(DecisionSet::Simplex.contains(&report.decision, 1e-12));
        let gaps = convergence_gap_trace(&report);
        assert_eq!(*gaps.last().unwrap(), 0.0);
        assert!(gaps.iter().all(|g| *g >= 0.0));
    }

    #[test]
    fn deterministic_reports() {
        let model = gw(40, 3, 76);
        let config = SolverConfig {
            lambda: 2.0,
            ..SolverConfig::default()
        };
        let a = alg_vb(&model, &config).unwrap();
        let b = alg_vb(&model, &config).unwrap();
        assert_eq!(a.decision, b.decision);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn other_models_solve() {
        let y = returns(40, 3, 77);
        let ar = ArModel::new(&y, ArPrior::from_data(&y).unwrap()).unwrap();
        let gp = GpModel::new(&y, GpPrior::from_data(&y, 3.0).unwrap()).unwrap();
        let config = SolverConfig {
            lambda: 3.0,
            ..SolverConfig::default()
        };
        for decision in [
            alg_vb(&ar, &config).unwrap().decision,
            alg_vb(&gp, &config).unwrap().decision,
        ] {
            assert!(DecisionSet::Simplex.contains(&decision, 1e-12));
        }
    }

    #[test]
    fn inner_failure_carries_context() {
        let model = gw(30, 3, 78);
        let config = SolverConfig {
            max_inner: 1,
            ..SolverConfig::default()
        };
        assert!(matches!(alg_vb(&model, &config), Err(Error::Inner { .. })));
    }

    #[test]
    fn stall_rule_accepts_rounding_floor() {
        // Averaged EMA experts of a few daily series are nearly collinear.
        use crate::data::{ema_experts, monthly, EmaSpec, Frequency, ReturnsDataset};
        let start = chrono::NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
        let daily = ReturnsDataset::new(
            (0..400).map(|i| start + chrono::Days::new(i)).collect(),
            (0..4).map(|j| format!("i{j}")).collect(),
            returns(400, 4, 81) * 0.1,
            Frequency::Daily,
        )
        .unwrap();
        let experts = monthly(&ema_experts(&daily, &EmaSpec::default()).unwrap());
        let y = experts.slice(0, 12).returns;
        let model = GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap();
        let delta = Vector::from_element(8, 0.125);
        let strict = SolverConfig {
            inner_tol: 1e-15,
            stall_sweeps: 0,
            max_inner: 3000,
            ..SolverConfig::default()
        };
        let sol = solve_inner(&model, model.initial_state().unwrap(), &delta, &strict).unwrap();
        assert!(!sol.converged);
        let lenient = SolverConfig {
            stall_sweeps: 50,
            ..strict
        };
        let sol = solve_inner(&model, model.initial_state().unwrap(), &delta, &lenient).unwrap();
        assert!(sol.converged && sol.stalled && sol.iterations < 3000);
    }

    #[test]
    fn step_expansion_handles_tiny_returns() {
        let y = returns(60, 4, 82) * 1e-3;
        let model = GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap();
        let report = alg_vb(&model, &SolverConfig::default()).unwrap();
        assert!(report.converged, "{} iterations", report.outer_iters);
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let model = gw(30, 2, 79);
        for config in [
            SolverConfig {
                lambda: -1.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                max_outer: 0,
                ..SolverConfig::default()
            },
            SolverConfig {
                inner_tol: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                step: StepSize::Fixed(0.0),
                ..SolverConfig::default()
            },
        ] {
            assert!(matches!(alg_vb(&model, &config), Err(Error::InvalidParameter(_))));
        }
    }
}
