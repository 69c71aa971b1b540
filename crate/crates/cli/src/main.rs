//! `bayesfolio` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 solver
//! failure or non-convergence.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayesfolio::data::{load_prices_csv, prepare_setting, to_returns, PriceSeries, ReturnsDataset, Setting};
use bayesfolio::evaluation::{
    backtest, best_index, consistency_experiment, cumulative_wealth, inner_iteration_study, inner_study_csv,
    BacktestResult, SyntheticModel,
};
use bayesfolio::models::{
    select_rbf_width, tune_grid, ArModel, ArPrior, GgModel, GgPrior, GpModel, GpPrior, GwModel, GwPrior,
};
use bayesfolio::strategies::{fit_strategy, Strategy};
use bayesfolio::vb::{alg_vb, SolveReport, SolverConfig};
use bayesfolio::{DecisionSet, Matrix, RngSeed, SpdMatrix, Vector};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use config::{ModelKind, RunConfig};
use output::{path_csv, write_atomic};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::validation(format!("{}: {e}", path.display()))
    }
}

impl From<bayesfolio::Error> for CliError {
    fn from(e: bayesfolio::Error) -> Self {
        use bayesfolio::Error as E;
        match e {
            E::NotConverged { .. } | E::Inner { .. } | E::StepUnderflow(_) | E::Diverged { .. } => {
                Self::solver(e.to_string())
            }
            other => Self::validation(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "bayesfolio",
    version,
    about = "Bayesian portfolio decisions by variational inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Risk aversion.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write `decision.json`.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        /// Price CSV (`date,<name1>,...`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Train on the EMA-expert split of setting 1, 2 or 3.
        #[arg(long)]
        setting: Option<Setting>,
        /// Without a setting: train on raw returns up to this date.
        #[arg(long)]
        train_end: Option<String>,
        #[arg(long)]
        decision_set: Option<DecisionSet>,
        #[arg(long)]
        max_outer: Option<usize>,
        #[arg(long)]
        max_inner: Option<usize>,
    },
    /// Run every strategy on the requested settings.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated settings, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        settings: Option<Vec<Setting>>,
    },
    /// Distance between sampling and variational decisions as `n` grows.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<SyntheticModel>,
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// Gibbs draws per repetition.
        #[arg(long = "M")]
        m_samples: Option<usize>,
    },
    /// Final objective gap as a function of the inner iteration cap.
    InnerStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        max_inner: Option<Vec<usize>>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BAYESFOLIO_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        CliError::validation(format!(
            "BAYESFOLIO_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))
}

fn apply_common(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(lambda) = common.lambda {
        config.lambda = lambda;
    }
    let seed = RngSeed(config.seed);
    config.solver.seed = seed;
    config.mcmc.seed = seed;
    config.consistency.seed = seed;
    config.inner_study.seed = seed;
    config.solver.lambda = config.lambda;
    config.consistency.lambda = config.lambda;
    config.inner_study.lambda = config.lambda;
    Ok(config)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit {
            common,
            model,
            data,
            setting,
            train_end,
            decision_set,
            max_outer,
            max_inner,
        } => {
            let mut config = apply_common(&common)?;
            if let Some(m) = model {
                config.model = m;
            }
            if data.is_some() {
                config.data = data;
            }
            if setting.is_some() {
                config.setting = setting;
            }
            if train_end.is_some() {
                config.train_end = train_end;
            }
            if let Some(set) = decision_set {
                config.solver.decision_set = set;
            }
            if let Some(v) = max_outer {
                config.solver.max_outer = v;
            }
            if let Some(v) = max_inner {
                config.solver.max_inner = v;
            }
            cmd_fit(&config)
        }
        Command::Backtest {
            common,
            data,
            settings,
        } => {
            let mut config = apply_common(&common)?;
            if data.is_some() {
                config.data = data;
            }
            if let Some(s) = settings {
                config.settings = s;
            }
            cmd_backtest(&config)
        }
        Command::Consistency {
            common,
            model,
            ns,
            d,
            reps,
            m_samples,
        } => {
            let mut config = apply_common(&common)?;
            let c = &mut config.consistency;
            if let Some(m) = model {
                c.model = m;
            }
            if let Some(ns) = ns {
                c.ns = ns;
            }
            if let Some(d) = d {
                c.d = d;
            }
            if let Some(r) = reps {
                c.reps = r;
            }
            if let Some(m) = m_samples {
                c.mcmc.m_samples = m;
            }
            cmd_consistency(&config)
        }
        Command::InnerStudy {
            common,
            max_inner,
            d,
            n,
            eta,
            max_outer,
        } => {
            let mut config = apply_common(&common)?;
            let s = &mut config.inner_study;
            if let Some(v) = max_inner {
                s.max_inners = v;
            }
            if let Some(v) = d {
                s.d = v;
            }
            if let Some(v) = n {
                s.n = v;
            }
            if let Some(v) = eta {
                s.eta = v;
            }
            if let Some(v) = max_outer {
                s.max_outer = v;
            }
            cmd_inner_study(&config)
        }
    }
}

fn load_data(config: &RunConfig) -> Result<PriceSeries, CliError> {
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| CliError::validation("no data file given (use --data)"))?;
    Ok(load_prices_csv(path)?)
}

/// Training rows: the EMA-expert split of the chosen setting, or raw returns
/// up to `train_end`.
fn training_rows(config: &RunConfig, prices: &PriceSeries) -> Result<ReturnsDataset, CliError> {
    if let Some(setting) = config.setting {
        return Ok(prepare_setting(prices, &config.ema, setting)?.0);
    }
    let returns = to_returns(prices)?;
    let Some(end) = &config.train_end else {
        return Ok(returns);
    };
    let end = NaiveDate::parse_from_str(end, "%Y-%m-%d")
        .map_err(|e| CliError::validation(format!("bad train_end `{end}`: {e}")))?;
    let keep = returns.dates.iter().take_while(|d| **d <= end).count();
    if keep == 0 {
        return Err(CliError::validation(format!("no returns on or before {end}")));
    }
    Ok(returns.slice(0, keep))
}

fn override_wishart(nu0: &mut f64, psi0: &mut SpdMatrix, new_nu0: Option<f64>) -> Result<(), CliError> {
    if let Some(nu) = new_nu0 {
        *psi0 = psi0.scale(*nu0 / nu)?;
        *nu0 = nu;
    }
    Ok(())
}

fn scaled_identity(d: usize, scale: Option<f64>) -> Result<SpdMatrix, CliError> {
    Ok(SpdMatrix::scaled_identity(d, scale.unwrap_or(1.0))?)
}

fn fit_model(config: &RunConfig, y: &Matrix) -> Result<SolveReport, CliError> {
    let overrides = &config.prior;
    let d = y.ncols();
    // Model construction validates inputs (exit 2); only the solve maps to 3.
    let solve = |r: bayesfolio::Result<SolveReport>| r.map_err(|e| CliError::solver(e.to_string()));
    match config.model {
        ModelKind::Gw => {
            let mut p = GwPrior::from_data(y)?;
            override_wishart(&mut p.nu0, &mut p.psi0, overrides.nu0)?;
            p.lambda0 = scaled_identity(d, overrides.prior_scale)?;
            solve(alg_vb(&GwModel::new(y, p)?, &config.solver))
        }
        ModelKind::Ar => {
            let mut p = ArPrior::from_data(y)?;
            override_wishart(&mut p.nu0, &mut p.psi0, overrides.nu0)?;
            p.u0 = scaled_identity(d, overrides.prior_scale)?;
            solve(alg_vb(&ArModel::new(y, p)?, &config.solver))
        }
        ModelKind::Gp => {
            let omega0 = scaled_identity(d, overrides.prior_scale)?;
            let gamma = match overrides.gp_gamma {
                Some(g) => g,
                None => select_rbf_width(y, &omega0, &tune_grid())?,
            };
            let mut p = GpPrior::from_data(y, gamma)?;
            p.omega0 = omega0;
            override_wishart(&mut p.nu0, &mut p.psi0, overrides.nu0)?;
            solve(alg_vb(&GpModel::new(y, p)?, &config.solver))
        }
        ModelKind::Gg => {
            let mut p = GgPrior::from_data(y)?;
            p.sigma0 = scaled_identity(d, overrides.prior_scale)?;
            solve(alg_vb(&GgModel::new(y, p)?, &config.solver))
        }
    }
}

#[derive(Serialize)]
struct DecisionFile<'a> {
    weights: &'a [f64],
    objective_trace: &'a [f64],
    converged: bool,
    seed: u64,
}

fn cmd_fit(config: &RunConfig) -> Result<(), CliError> {
    config.validate_common()?;
    let prices = load_data(config)?;
    let train = training_rows(config, &prices)?;
    let report = fit_model(config, &train.returns)?;
    let file = DecisionFile {
        weights: report.decision.as_slice(),
        objective_trace: &report.objective_trace,
        converged: report.converged,
        seed: report.seed.0,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::validation(e.to_string()))? + "\n";
    write_atomic(&config.output_dir.join("decision.json"), &json)?;
    if !report.converged {
        return Err(CliError::solver(format!(
            "outer loop did not converge in {} iterations (decision written)",
            report.outer_iters
        )));
    }
    Ok(())
}

fn solver_for_strategies(config: &RunConfig) -> SolverConfig {
    SolverConfig {
        lambda: config.lambda,
        ..config.solver.clone()
    }
}

fn cmd_backtest(config: &RunConfig) -> Result<(), CliError> {
    config.validate_common()?;
    if config.settings.is_empty() {
        return Err(CliError::validation("no settings requested"));
    }
    let prices = load_data(config)?;
    let splits = config
        .settings
        .iter()
        .map(|&s| Ok((s, prepare_setting(&prices, &config.ema, s)?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let solver = solver_for_strategies(config);
    let jobs: Vec<(usize, Strategy)> = (0..splits.len())
        .flat_map(|i| Strategy::ALL.into_iter().map(move |s| (i, s)))
        .collect();
    let results: Vec<bayesfolio::Result<BacktestResult>> = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            let (train, test) = &splits[i].1;
            let weights = fit_strategy(strategy, &train.returns, &solver)?;
            backtest(strategy.name(), &weights, &test.returns)
        })
        .collect();

    let mut failures = Vec::new();
    let mut sharpe = format!(
        "strategy,{}\n",
        splits
            .iter()
            .map(|(s, _)| format!("setting_{s}"))
            .collect::<Vec<_>>()
            .join(",")
    );
    for strategy in Strategy::ALL {
        sharpe.push_str(strategy.name());
        for (i, (setting, _)) in splits.iter().enumerate() {
            let k = i * Strategy::ALL.len() + Strategy::ALL.iter().position(|s| *s == strategy).unwrap_or(0);
            match &results[k] {
                Ok(r) => sharpe.push_str(&format!(",{:?}", r.sharpe_annualized)),
                Err(e) => {
                    sharpe.push_str(",nan");
                    failures.push(format!("setting {setting}, {strategy}: {e}"));
                }
            }
        }
        sharpe.push('\n');
    }

    for (i, (setting, (_, test))) in splits.iter().enumerate() {
        let dir = config.output_dir.join(format!("setting{setting}"));
        let mut weights_json = serde_json::Map::new();
        for (j, strategy) in Strategy::ALL.iter().enumerate() {
            if let Ok(r) = &results[i * Strategy::ALL.len() + j] {
                write_atomic(
                    &dir.join(format!("wealth_{strategy}.csv")),
                    &path_csv(&r.cumulative_wealth_path),
                )?;
                write_atomic(
                    &dir.join(format!("regret_{strategy}.csv")),
                    &path_csv(&r.regret_path),
                )?;
                weights_json.insert(strategy.name().into(), r.weights.as_slice().into());
            }
        }
        let mut best = Vector::zeros(test.d());
        best[best_index(&test.returns)] = 1.0;
        if let Ok(path) = cumulative_wealth(&best, &test.returns, true) {
            write_atomic(&dir.join("wealth_best-index.csv"), &path_csv(&path))?;
        }
        let json =
            serde_json::to_string_pretty(&weights_json).map_err(|e| CliError::validation(e.to_string()))?;
        write_atomic(&dir.join("weights.json"), &(json + "\n"))?;
    }
    write_atomic(&config.output_dir.join("sharpe.csv"), &sharpe)?;

    if failures.is_empty() {
        Ok(())
    } else {
        for f in &failures {
            log::error!("{f}");
        }
        Err(CliError::solver(format!(
            "{} strategy runs failed: {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}

#[derive(Serialize)]
struct Trend {
    first_n: usize,
    last_n: usize,
    first_mean: f64,
    last_mean: f64,
    decreasing: bool,
}

fn cmd_consistency(config: &RunConfig) -> Result<(), CliError> {
    config.consistency.validate()?;
    let table = consistency_experiment(&config.consistency)?;
    write_atomic(&config.output_dir.join("consistency.csv"), &table.to_csv_string())?;
    if let (Some(first), Some(last)) = (table.rows.first(), table.rows.last()) {
        let trend = Trend {
            first_n: first.n,
            last_n: last.n,
            first_mean: first.mean_norm,
            last_mean: last.mean_norm,
            decreasing: last.mean_norm < first.mean_norm,
        };
        let json = serde_json::to_string_pretty(&trend).map_err(|e| CliError::validation(e.to_string()))?;
        write_atomic(&config.output_dir.join("trend.json"), &(json + "\n"))?;
    }
    let empty: Vec<usize> = table
        .rows
        .iter()
        .filter(|r| r.reps_ok == 0)
        .map(|r| r.n)
        .collect();
    if !empty.is_empty() {
        return Err(CliError::solver(format!(
            "every repetition failed for n in {empty:?}"
        )));
    }
    Ok(())
}

fn cmd_inner_study(config: &RunConfig) -> Result<(), CliError> {
    let rows = inner_iteration_study(&config.inner_study)?;
    write_atomic(
        &config.output_dir.join("inner_study.csv"),
        &inner_study_csv(&rows),
    )
}
