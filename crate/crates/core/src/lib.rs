//! Bayesian portfolio construction under exponential utility.
//!
//! The optimal Bayesian decision for the utility `(1 - exp(-λ yᵀδ)) / λ` is a
//! saddle point: a minimum over decisions of a supremum over measures. This
//! crate restricts the inner supremum to the mean-field family, solves it with
//! coordinate-ascent fixed points, and runs projected gradient descent on the
//! outer problem using the envelope gradient `-λ E[Y]`.
//!
//! Modules:
//! - [`linalg`], [`simplex`], [`sampling`]: shared numerical primitives.
//! - [`models`]: priors, fixed-point operators and objectives for the
//!   Gaussian–Wishart, autoregressive, Gaussian-process and Gaussian–Gaussian models.
//! - [`vb`]: the outer projected-gradient solver.
//! - [`mcmc`]: Gibbs-sampling reference solver.
//! - [`baselines`], [`data`], [`evaluation`]: comparison portfolios, data
//!   preparation and out-of-sample metrics.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod sampling;
pub mod simplex;
pub mod strategies;
pub mod vb;

pub use error::{Error, Result};
pub use linalg::{Matrix, SpdMatrix, Vector};
pub use sampling::RngSeed;
pub use simplex::DecisionSet;
