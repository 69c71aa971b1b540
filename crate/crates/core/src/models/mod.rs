//! Statistical models: priors, mean-field fixed-point operators, objectives,
//! the exact Gaussian–Gaussian oracle and asymptotic Markowitz targets.
//!
//! Every variational model implements [`VariationalModel`]. A state is the
//! finite parameter vector of the mean-field approximation; one call to
//! [`VariationalModel::fixed_point_step`] is one coordinate-ascent sweep over
//! the factors (predictive `Y_{n+1}`, then the model parameters, then the
//! Wishart precision), each factor consuming the freshest values of the
//! others.
//!
//! Objectives are the evidence lower bound of the utility-tilted posterior,
//! with every term that cannot depend on the decision dropped. Only
//! differences between objective values are meaningful.

mod ar;
mod asymptotic;
mod companion;
mod defaults;
mod gg;
mod gp;
mod gw;

pub use ar::{ArModel, ArPrior, ArState};
pub use asymptotic::{asymptotic_markowitz_target, AsymptoticModel};
pub use companion::ar_p_companion;
pub use defaults::{default_wishart_prior, select_rbf_width, tune_grid};
pub use gg::{gg_exact_decision, GgModel, GgPrior, GgState};
pub use gp::{GpModel, GpPosteriorCovariance, GpPrior, GpState, MeanFunction};
pub use gw::{GwModel, GwPrior, GwState};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// A model whose mean-field approximation is the fixed point of a sweep operator.
pub trait VariationalModel {
    type State: Clone + std::fmt::Debug;

    /// Asset dimension `d`.
    fn dim(&self) -> usize;

    /// Deterministic cold-start state.
    fn initial_state(&self) -> Result<Self::State>;

    /// One application of the fixed-point operator `T_n` at decision `delta`.
    fn fixed_point_step(&self, state: &Self::State, delta: &Vector, lambda: f64) -> Result<Self::State>;

    /// Objective at `state` and `delta`, up to a decision-independent constant.
    fn objective(&self, state: &Self::State, delta: &Vector, lambda: f64) -> Result<f64>;

    /// Largest scaled change between two states, over every parameter block.
    /// Each block contributes `max|Δ| / max(1, max|new|)`.
    fn residual(&self, prev: &Self::State, next: &Self::State) -> f64;

    /// Mean `ξ_y` of the predictive factor.
    fn predictive_mean<'a>(&self, state: &'a Self::State) -> &'a Vector;
}

/// Envelope gradient `-λ ξ_y` of the objective at a converged state.
///
/// Refuses states whose next sweep moves more than `tol`: the envelope
/// identity only holds at the maximizer.
pub fn envelope_gradient<M: VariationalModel>(
    model: &M,
    state: &M::State,
    delta: &Vector,
    lambda: f64,
    tol: f64,
) -> Result<Vector> {
    let next = model.fixed_point_step(state, delta, lambda)?;
    let residual = model.residual(state, &next);
    if residual > tol {
        return Err(Error::NotConverged {
            residual,
            iterations: 0,
        });
    }
    Ok(model.predictive_mean(state) * (-lambda))
}

pub(crate) fn scaled_change(prev: &Matrix, next: &Matrix) -> f64 {
    let diff = prev
        .iter()
        .zip(next.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    diff / next.amax().max(1.0)
}

pub(crate) fn scaled_change_vec(prev: &Vector, next: &Vector) -> f64 {
    let diff = (prev - next).amax();
    diff / next.amax().max(1.0)
}

pub(crate) fn check_step_inputs(d: usize, delta: &Vector, lambda: f64) -> Result<()> {
    if delta.len() != d {
        return Err(Error::Dimension {
            context: "decision vector",
            expected: d,
            found: delta.len(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "risk aversion must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

pub(crate) fn check_observations(y: &Matrix, min_rows: usize, what: &str) -> Result<()> {
    if y.ncols() == 0 {
        return Err(Error::InsufficientData(format!("{what}: no asset columns")));
    }
    if y.nrows() < min_rows {
        return Err(Error::InsufficientData(format!(
            "{what}: need at least {min_rows} rows, got {}",
            y.nrows()
        )));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what}: non-finite observation")));
    }
    Ok(())
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
