//! JSON run configuration. Command-line flags override file values.

use std::path::{Path, PathBuf};

use bayesfolio::data::{EmaSpec, Setting};
use bayesfolio::evaluation::{ConsistencyConfig, InnerStudyConfig};
use bayesfolio::mcmc::McmcConfig;
use bayesfolio::vb::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Gw,
    Ar,
    Gp,
    Gg,
}

/// Optional adjustments to the data-driven default priors.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorOverrides {
    /// Wishart degrees of freedom; the scale keeps `ν₀ψ₀ = Σ̂⁻¹`.
    pub nu0: Option<f64>,
    /// Multiplier on the identity prior precision of the mean (GW) or the
    /// identity prior covariance (GG, AR row/column covariances, GP Ω₀).
    pub prior_scale: Option<f64>,
    /// Fixed RBF width for the GP model, skipping the grid search.
    pub gp_gamma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub lambda: f64,
    pub data: Option<PathBuf>,
    pub setting: Option<Setting>,
    /// Explicit split: train on returns dated on or before this day
    /// (`YYYY-MM-DD`). Used when no setting is given.
    pub train_end: Option<String>,
    pub settings: Vec<Setting>,
    pub ema: EmaSpec,
    pub prior: PriorOverrides,
    pub solver: SolverConfig,
    pub mcmc: McmcConfig,
    pub consistency: ConsistencyConfig,
    pub inner_study: InnerStudyConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Gw,
            lambda: 1.0,
            data: None,
            setting: None,
            train_end: None,
            settings: Setting::ALL.to_vec(),
            ema: EmaSpec::default(),
            prior: PriorOverrides::default(),
            solver: SolverConfig::default(),
            mcmc: McmcConfig::default(),
            consistency: ConsistencyConfig::default(),
            inner_study: InnerStudyConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn validate_common(&self) -> Result<(), CliError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(CliError::validation(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.ema.validate()?;
        self.solver.validate()?;
        if let Some(nu0) = self.prior.nu0 {
            if !(nu0 > 0.0) {
                return Err(CliError::validation(format!("nu0 must be positive, got {nu0}")));
            }
        }
        for (name, v) in [
            ("prior_scale", self.prior.prior_scale),
            ("gp_gamma", self.prior.gp_gamma),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(CliError::validation(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}
