//! From market data to optimal strategies: moment estimation, the CARA
//! terminal condition, the PDE solve and strategy extraction.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::{piece_theta, PiecewiseAlpha};
use crate::error::{Error, Result};
use crate::pde::{solve_pde, BoundaryCondition, PdeProblem, PhiField, ScalarFn, Scheme};
use crate::qp::{solve_qp, ConstraintSet, MarketModel};
use crate::verification::{grid_size, KRule};

/// Daily closing prices, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceHistory {
    pub tickers: Vec<String>,
    /// ISO `YYYY-MM-DD`, strictly increasing.
    pub dates: Vec<String>,
    /// `prices[t][i]`
    pub prices: Vec<Vec<f64>>,
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| r.clone().all(|i| b[i].is_ascii_digit()).then(|| s[r].parse::<u32>().ok()).flatten();
    matches!(
        (digits(0..4), digits(5..7), digits(8..10)),
        (Some(_), Some(1..=12), Some(1..=31))
    )
}

impl PriceHistory {
    pub fn new(tickers: Vec<String>, dates: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() {
            return Err(Error::Parse("no tickers".into()));
        }
        if dates.len() != prices.len() {
            return Err(Error::ShapeMismatch(format!("{} dates but {} price rows", dates.len(), prices.len())));
        }
        for (t, (date, row)) in dates.iter().zip(&prices).enumerate() {
            if !is_iso_date(date) {
                return Err(Error::Parse(format!("row {}: '{date}' is not an ISO date", t + 1)));
            }
            if t > 0 && dates[t - 1].as_str() >= date.as_str() {
                return Err(Error::Parse(format!("dates not strictly increasing at '{date}'")));
            }
            if row.len() != tickers.len() {
                return Err(Error::ShapeMismatch(format!(
                    "row {date} has {} prices, expected {}",
                    row.len(),
                    tickers.len()
                )));
            }
            for (ticker, &value) in tickers.iter().zip(row) {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::NonPositivePrice {
                        ticker: ticker.clone(),
                        date: date.clone(),
                        value,
                    });
                }
            }
        }
        Ok(Self { tickers, dates, prices })
    }

    /// Parses `date,<ticker>...` CSV; rows with empty cells are rejected.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        if header.len() < 2 || !header[0].eq_ignore_ascii_case("date") {
            return Err(Error::Parse("header must be 'date,<ticker>...'".into()));
        }
        let tickers: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut dates = Vec::new();
        let mut prices = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let date = rec.get(0).unwrap_or_default().to_owned();
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("data row {}: bad price '{cell}'", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            dates.push(date);
            prices.push(row);
        }
        Self::new(tickers, dates, prices)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv(file)
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// `ln(P_{t+1} / P_t)` per asset.
    pub fn log_returns(&self) -> Vec<Vec<f64>> {
        self.prices
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(p0, p1)| (p1 / p0).ln()).collect())
            .collect()
    }
}

/// Annualized sample mean and unbiased covariance of log-returns.
pub fn estimate_moments(history: &PriceHistory, periods_per_year: f64) -> Result<MarketModel> {
    if !(periods_per_year > 0.0) {
        return Err(Error::InvalidParams(format!(
            "periods per year must be positive, got {periods_per_year}"
        )));
    }
    if history.prices.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations, got {}",
            history.prices.len()
        )));
    }
    let returns = history.log_returns();
    let (count, n) = (returns.len() as f64, history.n_assets());
    let mean: Vec<f64> = (0..n).map(|i| returns.iter().map(|r| r[i]).sum::<f64>() / count).collect();
    let mut cov = vec![vec![0.0; n]; n];
    for r in &returns {
        for i in 0..n {
            for j in 0..=i {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let v = cov[i][j] / (count - 1.0) * periods_per_year;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    let mu = mean.iter().map(|m| m * periods_per_year).collect();
    MarketModel::new(mu, cov)
}

/// Reads a model: first row `mu`, then the `n` rows of `Sigma`; no header.
pub fn model_from_csv<R: Read>(reader: R) -> Result<MarketModel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let row = rec
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("model row {}: bad number '{cell}'", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let Some((mu, sigma)) = rows.split_first() else {
        return Err(Error::Parse("empty model file".into()));
    };
    if sigma.len() != mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} expected returns but {} covariance rows",
            mu.len(),
            sigma.len()
        )));
    }
    MarketModel::new(mu.clone(), sigma.to_vec())
}

pub fn model_from_path(path: &Path) -> Result<MarketModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    model_from_csv(file)
}

/// Terminal condition `phi(x, T) = a` of the CARA utility
/// `U(x) = -exp(-(a - 1) x) / (a - 1)`.
pub fn cara_terminal(a: f64) -> Result<ScalarFn> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::InvalidRiskAversion(a));
    }
    Ok(Arc::new(move |_| a))
}

/// Optimal weights `theta(x, t)` on the PDE grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySurface {
    /// Grid nodes including the boundary nodes.
    pub x: Vec<f64>,
    /// `y = e^x`
    pub y: Vec<f64>,
    /// Calendar times `t = T - tau`, one per layer.
    pub t: Vec<f64>,
    /// `weights[j][i]` at `(x_i, t_j)`.
    pub weights: Vec<Vec<Vec<f64>>>,
    /// Zero-weight assets at `(x_i, t_j)`.
    pub active_sets: Vec<Vec<Vec<usize>>>,
}

fn strategy_at(model: &MarketModel, constraints: ConstraintSet, alpha: Option<&PiecewiseAlpha>, phi: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(phi > 0.0) {
        return Err(Error::NonPositivePhi(phi));
    }
    if let Some(alpha) = alpha.filter(|a| a.constraints() == constraints) {
        // (lo, hi] pieces: a breakpoint belongs to the piece on its left
        if phi > alpha.phi_min() {
            if let Some(found) = piece_theta(alpha, phi) {
                return Ok(found);
            }
        }
    }
    let sol = solve_qp(model, phi, constraints)?;
    Ok((sol.theta, sol.active_set))
}

/// `theta(x, t) = argmin` of the allocation problem at `phi(x, t)`, read off
/// the piecewise representation where it covers `phi`.
pub fn extract_strategy(
    phi: &PhiField,
    model: &MarketModel,
    constraints: ConstraintSet,
    alpha: Option<&PiecewiseAlpha>,
) -> Result<StrategySurface> {
    let layers = (0..phi.n_layers())
        .into_par_iter()
        .map(|j| {
            phi.layer(j)
                .iter()
                .map(|&v| strategy_at(model, constraints, alpha, v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let (weights, active_sets) = layers
        .into_iter()
        .map(|layer| layer.into_iter().unzip())
        .unzip();
    Ok(StrategySurface {
        x: phi.grid.clone(),
        y: phi.grid.iter().map(|x| x.exp()).collect(),
        t: (0..phi.n_layers()).map(|j| phi.t(j)).collect(),
        weights,
        active_sets,
    })
}

/// Configuration of the end-to-end strategy computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Constant absolute risk aversion `a > 1`.
    pub a: f64,
    pub epsilon: f64,
    pub r: f64,
    pub horizon: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub h: f64,
    pub k_rule: KRule,
    /// Robin coefficient at the left end; the right end is Neumann.
    pub robin_d: f64,
    pub constraints: ConstraintSet,
    /// Lower end of the range on which `alpha` is tabulated.
    pub phi_floor: f64,
    pub fully_implicit: bool,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            a: 9.0,
            epsilon: 1.0,
            r: 0.0,
            horizon: 10.0,
            y_lo: 0.01,
            y_hi: 10.0,
            h: 0.1,
            k_rule: KRule::Quadratic(0.1),
            robin_d: 1.0,
            constraints: ConstraintSet::Simplex,
            phi_floor: 1e-3,
            fully_implicit: true,
            tol: crate::pde::DEFAULT_TOL,
            max_iters: crate::pde::DEFAULT_MAX_ITERS,
        }
    }
}

impl PipelineConfig {
    pub fn scheme(&self) -> Scheme {
        if self.fully_implicit {
            Scheme::FullyImplicit {
                tol: self.tol,
                max_iters: self.max_iters,
            }
        } else {
            Scheme::SemiImplicit
        }
    }

    /// The PDE problem on `[ln y_lo, ln y_hi]` for a given `alpha`.
    pub fn problem(&self, alpha: Arc<PiecewiseAlpha>) -> Result<PdeProblem> {
        if !(self.y_lo > 0.0 && self.y_lo < self.y_hi) {
            return Err(Error::InvalidParams(format!(
                "need 0 < y_lo < y_hi, got [{}, {}]",
                self.y_lo, self.y_hi
            )));
        }
        let (x_lo, x_hi) = (self.y_lo.ln(), self.y_hi.ln());
        let (n, m) = grid_size(x_hi - x_lo, self.horizon, self.h, self.k_rule.k(self.h))?;
        Ok(PdeProblem {
            epsilon: self.epsilon,
            r: self.r,
            x_lo,
            x_hi,
            n_interior: n,
            m_steps: m,
            horizon: self.horizon,
            terminal: cara_terminal(self.a)?,
            left_bc: BoundaryCondition::Robin(self.robin_d),
            right_bc: BoundaryCondition::Neumann,
            alpha,
        })
    }
}

/// Everything the pipeline produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub alpha: Arc<PiecewiseAlpha>,
    pub field: PhiField,
    pub strategy: StrategySurface,
    /// `(stage, seconds)`
    pub timings: Vec<(&'static str, f64)>,
}

/// `alpha` on `(phi_floor, a]`, then the PDE, then the strategy surface.
pub fn run_pipeline(model: &MarketModel, config: &PipelineConfig) -> Result<PipelineOutput> {
    let mut timings = Vec::new();
    let clock = Instant::now();
    let alpha = PiecewiseAlpha::build(model, config.phi_floor, config.a, config.constraints)
        .map_err(|e| e.in_stage("alpha"))?;
    let alpha = Arc::new(alpha);
    timings.push(("alpha", clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let problem = config.problem(Arc::clone(&alpha)).map_err(|e| e.in_stage("setup"))?;
    let field = solve_pde(&problem, config.scheme()).map_err(|e| e.in_stage("solve"))?;
    timings.push(("solve", clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let strategy = extract_strategy(&field, model, config.constraints, Some(&alpha)).map_err(|e| e.in_stage("strategy"))?;
    timings.push(("strategy", clock.elapsed().as_secs_f64()));

    Ok(PipelineOutput {
        alpha,
        field,
        strategy,
        timings,
    })
}
