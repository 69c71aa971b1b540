//! Price ingestion, return construction, EMA experts and train/test splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SpdMatrix, Vector};
use crate::sampling::{sample_mvn_chol, RngSeed};

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Monthly,
}

/// Raw index levels, one column per index.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub prices: Matrix,
    /// Rows discarded at load time because a price was missing.
    pub dropped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsDataset {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub returns: Matrix,
    pub frequency: Frequency,
}

impl ReturnsDataset {
    pub fn new(
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        returns: Matrix,
        frequency: Frequency,
    ) -> Result<Self> {
        if returns.nrows() == 0 || returns.ncols() == 0 {
            return Err(Error::InsufficientData(
                "a returns dataset needs at least one row and column".into(),
            ));
        }
        if dates.len() != returns.nrows() || names.len() != returns.ncols() {
            return Err(Error::Dimension {
                context: "returns dataset labels",
                expected: returns.nrows(),
                found: dates.len(),
            });
        }
        if returns.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "returns contain non-finite values".into(),
            ));
        }
        Ok(Self {
            dates,
            names,
            returns,
            frequency,
        })
    }

    pub fn n(&self) -> usize {
        self.returns.nrows()
    }

    pub fn d(&self) -> usize {
        self.returns.ncols()
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> ReturnsDataset {
        ReturnsDataset {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            returns: self.returns.rows(start, end - start).into_owned(),
            frequency: self.frequency,
        }
    }

    /// Writes `date,<names>` rows, the same schema as price files.
    pub fn to_csv_string(&self) -> String {
        table_csv(&self.dates, &self.names, &self.returns)
    }
}

fn table_csv(dates: &[NaiveDate], names: &[String], values: &Matrix) -> String {
    let mut out = String::from("date");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, date) in dates.iter().enumerate() {
        out.push_str(&date.format(DATE_FORMAT).to_string());
        for j in 0..values.ncols() {
            out.push(',');
            out.push_str(&format!("{:?}", values[(t, j)]));
        }
        out.push('\n');
    }
    out
}

impl PriceSeries {
    pub fn to_csv_string(&self) -> String {
        table_csv(&self.dates, &self.names, &self.prices)
    }
}

/// Half-lives (in periods) of the EMA experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaSpec {
    pub scales: Vec<f64>,
}

impl Default for EmaSpec {
    fn default() -> Self {
        Self {
            scales: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
        }
    }
}

impl EmaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidParameter("EMA spec has no scales".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("EMA scales must be positive".into()));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "EMA scales must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Decay `β = exp(−ln 2 / s)`, so a shock halves after `s` periods.
    pub fn decay(scale: f64) -> f64 {
        (-std::f64::consts::LN_2 / scale).exp()
    }
}

/// Reads a `date,<name1>,...` price file.
///
/// Rows with an empty price cell are dropped and counted; any other
/// malformed cell is an error naming the line.
pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let io_err = |source: std::io::Error| Error::Io {
        path: shown.clone(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    parse_prices(&text, &shown)
}

/// Parses price CSV text; `origin` labels error messages.
pub fn parse_prices(text: &str, origin: &str) -> Result<PriceSeries> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    match header.get(0) {
        Some("date") => {}
        _ => {
            return Err(Error::MissingColumn {
                path: origin.to_string(),
                column: "date".into(),
            })
        }
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::MissingColumn {
            path: origin.to_string(),
            column: "<price column>".into(),
        });
    }
    if let Some(blank) = names.iter().position(|n| n.is_empty()) {
        return Err(parse_err(1, format!("column {} has an empty name", blank + 2)));
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>, u64)> = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() + 1 {
            let missing = names.get(record.len().saturating_sub(1)).cloned();
            return match missing {
                Some(column) if record.len() <= names.len() => Err(parse_err(
                    line,
                    format!("row has {} fields, missing column `{column}`", record.len()),
                )),
                _ => Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", names.len() + 1, record.len()),
                )),
            };
        }
        let date = NaiveDate::parse_from_str(&record[0], DATE_FORMAT)
            .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", &record[0])))?;
        if record.iter().skip(1).any(str::is_empty) {
            dropped += 1;
            continue;
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("bad number `{cell}` in column `{}`", names[j])))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("non-positive price {v} in column `{}`", names[j]),
                ));
            }
            values.push(v);
        }
        rows.push((date, values, line));
    }
    if dropped > 0 {
        log::warn!("{origin}: dropped {dropped} rows with missing prices");
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(parse_err(w[1].2, format!("duplicate date {}", w[1].0)));
    }
    let m = names.len();
    let prices = Matrix::from_fn(rows.len(), m, |t, j| rows[t].1[j]);
    Ok(PriceSeries {
        dates: rows.iter().map(|r| r.0).collect(),
        names,
        prices,
        dropped_rows: dropped,
    })
}

/// Simple returns `p_t / p_{t−1} − 1`, dated at `t`.
pub fn to_returns(prices: &PriceSeries) -> Result<ReturnsDataset> {
    let t = prices.prices.nrows();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "returns need at least 2 prices, got {t}"
        )));
    }
    let p = &prices.prices;
    let returns = Matrix::from_fn(t - 1, p.ncols(), |i, j| p[(i + 1, j)] / p[(i, j)] - 1.0);
    ReturnsDataset::new(
        prices.dates[1..].to_vec(),
        prices.names.clone(),
        returns,
        Frequency::Daily,
    )
}

/// Averaged EMA experts: column `k` is the cross-index average of the EMA at
/// scale `k`. Each recursion starts from the first observation.
pub fn ema_experts(returns: &ReturnsDataset, spec: &EmaSpec) -> Result<ReturnsDataset> {
    spec.validate()?;
    let (n, m) = (returns.n(), returns.d());
    let r = &returns.returns;
    let mut out = Matrix::zeros(n, spec.scales.len());
    for (k, &scale) in spec.scales.iter().enumerate() {
        let beta = EmaSpec::decay(scale);
        for j in 0..m {
            let mut ema = r[(0, j)];
            for t in 0..n {
                ema = (1.0 - beta) * r[(t, j)] + beta * ema;
                out[(t, k)] += ema / m as f64;
            }
        }
    }
    let names = spec.scales.iter().map(|s| format!("ema{s}")).collect();
    ReturnsDataset::new(returns.dates.clone(), names, out, returns.frequency)
}

/// Keeps the last available row of each calendar month.
pub fn monthly(returns: &ReturnsDataset) -> ReturnsDataset {
    if returns.frequency == Frequency::Monthly {
        return returns.clone();
    }
    let keep: Vec<usize> = (0..returns.n())
        .filter(|&t| {
            t + 1 == returns.n() || {
                let (a, b) = (returns.dates[t], returns.dates[t + 1]);
                (a.year(), a.month()) != (b.year(), b.month())
            }
        })
        .collect();
    ReturnsDataset {
        dates: keep.iter().map(|&t| returns.dates[t]).collect(),
        names: returns.names.clone(),
        returns: Matrix::from_fn(keep.len(), returns.d(), |i, j| returns.returns[(keep[i], j)]),
        frequency: Frequency::Monthly,
    }
}

/// Experimental settings with 12, 48 and 84 monthly training rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    One,
    Two,
    Three,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::One, Setting::Two, Setting::Three];

    pub fn train_months(self) -> usize {
        match self {
            Setting::One => 12,
            Setting::Two => 48,
            Setting::Three => 84,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Setting::One => 1,
            Setting::Two => 2,
            Setting::Three => 3,
        }
    }
}

impl TryFrom<u8> for Setting {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            3 => Ok(Setting::Three),
            _ => Err(Error::InvalidParameter(format!(
                "setting must be 1, 2 or 3, got {v}"
            ))),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        s.number()
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("setting must be 1, 2 or 3, got `{s}`")))?;
        Setting::try_from(v)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Monthly train/test split: the first `train_months` months train, every
/// later month tests.
pub fn build_setting(returns: &ReturnsDataset, setting: Setting) -> Result<(ReturnsDataset, ReturnsDataset)> {
    let monthly = monthly(returns);
    let n = setting.train_months();
    if monthly.n() <= n {
        return Err(Error::InsufficientData(format!(
            "setting {setting} needs more than {n} monthly rows, got {}",
            monthly.n()
        )));
    }
    Ok((monthly.slice(0, n), monthly.slice(n, monthly.n())))
}

/// Full pipeline from daily prices to a setting split.
pub fn prepare_setting(
    prices: &PriceSeries,
    spec: &EmaSpec,
    setting: Setting,
) -> Result<(ReturnsDataset, ReturnsDataset)> {
    build_setting(&ema_experts(&to_returns(prices)?, spec)?, setting)
}

fn synthetic_dates(count: usize) -> Vec<NaiveDate> {
    let start = NaiveDate::from_ymd_opt(2000, 2, 1).expect("valid date");
    (0..count)
        .map(|i| (start + Months::new(i as u32)).pred_opt().expect("valid date"))
        .collect()
}

fn synthetic_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("asset{j}")).collect()
}

/// `n` i.i.d. draws from `N(μ*, Σ*)`.
pub fn synth_gw(mu_star: &Vector, sigma_star: &SpdMatrix, n: usize, seed: RngSeed) -> Result<ReturnsDataset> {
    let d = mu_star.len();
    if sigma_star.dim() != d {
        return Err(Error::Dimension {
            context: "synthetic covariance",
            expected: d,
            found: sigma_star.dim(),
        });
    }
    let chol = sigma_star.cholesky_l();
    let mut rng = seed.rng();
    let mut y = Matrix::zeros(n, d);
    for t in 0..n {
        y.set_row(t, &sample_mvn_chol(mu_star, &chol, &mut rng).transpose());
    }
    ReturnsDataset::new(synthetic_dates(n), synthetic_names(d), y, Frequency::Monthly)
}

/// `Y_t = Γ* Y_{t−1} + ε_t`, `ε_t ~ N(0, Σ*)`. Returns `n + 1` rows, the
/// first being `y0`.
pub fn synth_ar(
    gamma_star: &Matrix,
    sigma_star: &SpdMatrix,
    y0: &Vector,
    n: usize,
    seed: RngSeed,
) -> Result<ReturnsDataset> {
    let d = y0.len();
    if gamma_star.shape() != (d, d) || sigma_star.dim() != d {
        return Err(Error::Dimension {
            context: "synthetic AR parameters",
            expected: d,
            found: gamma_star.nrows(),
        });
    }
    let chol = sigma_star.cholesky_l();
    let zero = Vector::zeros(d);
    let mut rng = seed.rng();
    let mut y = Matrix::zeros(n + 1, d);
    y.set_row(0, &y0.transpose());
    let mut prev = y0.clone();
    for t in 1..=n {
        let next = gamma_star * &prev + sample_mvn_chol(&zero, &chol, &mut rng);
        y.set_row(t, &next.transpose());
        prev = next;
    }
    ReturnsDataset::new(synthetic_dates(n + 1), synthetic_names(d), y, Frequency::Monthly)
}

/// Ground truth used by the consistency experiment.
#[derive(Debug, Clone)]
pub enum SyntheticTruth {
    Gw { mu: Vector, sigma: SpdMatrix },
    Ar { gamma: Matrix, sigma: SpdMatrix },
}

/// i.i.d. recipe: `μ*_i ~ U[0, 1]`, `Σ* = I`.
pub fn gw_truth(d: usize, seed: RngSeed) -> SyntheticTruth {
    let mut rng = seed.rng();
    SyntheticTruth::Gw {
        mu: Vector::from_fn(d, |_, _| rng.gen::<f64>()),
        sigma: SpdMatrix::identity(d),
    }
}

/// Autoregressive recipe: `Γ*` diagonal, evenly spaced from 0.6 to 0.99,
/// `Σ* = 0.1 I`.
pub fn ar_truth(d: usize) -> SyntheticTruth {
    let diag = Vector::from_fn(d, |i, _| {
        if d == 1 {
            0.6
        } else {
            0.6 + 0.39 * i as f64 / (d - 1) as f64
        }
    });
    SyntheticTruth::Ar {
        gamma: Matrix::from_diagonal(&diag),
        sigma: SpdMatrix::scaled_identity(d, 0.1).expect("positive scale"),
    }
}

impl SyntheticTruth {
    /// Draws `n` observations (AR adds a leading `Y_0 = 0` row).
    pub fn generate(&self, n: usize, seed: RngSeed) -> Result<ReturnsDataset> {
        match self {
            SyntheticTruth::Gw { mu, sigma } => synth_gw(mu, sigma, n, seed),
            SyntheticTruth::Ar { gamma, sigma } => {
                synth_ar(gamma, sigma, &Vector::zeros(gamma.nrows()), n, seed)
            }
        }
    }
}
