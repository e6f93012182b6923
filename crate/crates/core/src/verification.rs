//! Discrete error norms and experimental order of convergence (EOC) against
//! the traveling-wave benchmark.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::PiecewiseAlpha;
use crate::error::{Error, Result};
use crate::pde::{solve_pde, BoundaryCondition, PdeProblem, PhiField, Scheme};
use crate::wave::WaveBenchmark;

/// `(L_inf(0,T; L2), L2(0,T; W^1_2))` of a sampled error field.
///
/// `errors[j]` holds the interior-cell errors of layer `j`; layer 0 is the
/// terminal data and only enters the `L_inf` norm.
pub fn error_norms(errors: &[Vec<f64>], h: f64, k: f64) -> Result<(f64, f64)> {
    let Some(first) = errors.first() else {
        return Err(Error::ShapeMismatch("no layers".into()));
    };
    let width = first.len();
    if width == 0 {
        return Err(Error::ShapeMismatch("empty layer".into()));
    }
    let mut linf_l2 = 0.0_f64;
    let mut sum = 0.0;
    for (j, e) in errors.iter().enumerate() {
        if e.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "layer {j} has {} cells, expected {width}",
                e.len()
            )));
        }
        let l2 = (h * e.iter().map(|v| v * v).sum::<f64>()).sqrt();
        linf_l2 = linf_l2.max(l2);
        if j > 0 {
            let grad = (h * e.windows(2).map(|w| ((w[1] - w[0]) / h).powi(2)).sum::<f64>()).sqrt();
            sum += (l2 + grad).powi(2);
        }
    }
    Ok((linf_l2, (k * sum).sqrt()))
}

/// Norms of `numeric - exact` at the interior cells, `exact` taking `(x, t)`
/// in calendar time.
pub fn discrete_norms<F>(numeric: &PhiField, exact: F) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> Result<f64>,
{
    if numeric.width() < 3 || numeric.n_layers() == 0 {
        return Err(Error::ShapeMismatch("field has no interior cells or layers".into()));
    }
    let n = numeric.n_interior();
    let errors = (0..numeric.n_layers())
        .map(|j| {
            let t = numeric.t(j);
            numeric
                .interior(j)
                .iter()
                .enumerate()
                .map(|(i, &v)| Ok(v - exact(numeric.grid[i + 1], t)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert!(errors.iter().all(|e| e.len() == n));
    error_norms(&errors, numeric.h(), numeric.k())
}

/// `ln(e / e_prev) / ln(h / h_prev)`; `None` when either error vanishes.
pub fn eoc(err_prev: f64, err: f64, h_prev: f64, h: f64) -> Option<f64> {
    if err_prev > 0.0 && err > 0.0 && h != h_prev {
        Some((err / err_prev).ln() / (h / h_prev).ln())
    } else {
        None
    }
}

/// How the time step is tied to the spatial step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KRule {
    /// `k = c h`
    Linear(f64),
    /// `k = c h^2`
    Quadratic(f64),
}

impl KRule {
    pub fn k(&self, h: f64) -> f64 {
        match *self {
            KRule::Linear(c) => c * h,
            KRule::Quadratic(c) => c * h * h,
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::Linear(c) => write!(f, "{c}*h"),
            KRule::Quadratic(c) => write!(f, "{c}*h^2"),
        }
    }
}

impl FromStr for KRule {
    type Err = Error;

    /// Accepts `c*h`, `c*h^2`, `h` and `h^2` (whitespace ignored).
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (coef, var) = match s.split_once('*') {
            Some((c, v)) => (c, v),
            None => ("1", s.as_str()),
        };
        let c: f64 = coef
            .parse()
            .map_err(|_| Error::Parse(format!("bad k-rule coefficient '{coef}'")))?;
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Parse(format!("k-rule coefficient must be positive, got {c}")));
        }
        match var {
            "h" => Ok(KRule::Linear(c)),
            "h^2" | "h2" | "h*h" => Ok(KRule::Quadratic(c)),
            _ => Err(Error::Parse(format!("k-rule must look like c*h or c*h^2, got '{s}'"))),
        }
    }
}

/// One refinement level of an EOC study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub h: f64,
    pub k: f64,
    pub err_linf_l2: f64,
    pub err_l2_w12: f64,
    pub eoc_linf: Option<f64>,
    pub eoc_l2: Option<f64>,
    /// Largest number of micro-iterations over all steps.
    pub max_iterations: usize,
    pub clamped: usize,
}

/// Number of interior cells and steps for the requested `h` and `k`, with
/// both steps recomputed to divide the domain and horizon exactly.
pub fn grid_size(length: f64, horizon: f64, h: f64, k: f64) -> Result<(usize, usize)> {
    if !(h > 0.0 && k > 0.0 && length > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidParams("steps, length and horizon must be positive".into()));
    }
    let cells = (length / h).round();
    let steps = (horizon / k).round();
    if cells < 3.0 || steps < 1.0 {
        return Err(Error::InvalidParams(format!("grid too coarse: h = {h}, k = {k}")));
    }
    Ok((cells as usize - 1, steps as usize))
}

/// Traveling-wave convergence experiment with Dirichlet data from the wave.
#[derive(Debug, Clone)]
pub struct EocStudy {
    pub benchmark: Arc<WaveBenchmark>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub k_rule: KRule,
    pub scheme: Scheme,
}

impl EocStudy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: Arc<PiecewiseAlpha>,
        v_minus: f64,
        v_plus: f64,
        x_lo: f64,
        x_hi: f64,
        horizon: f64,
        k_rule: KRule,
        scheme: Scheme,
        rel_tol: f64,
    ) -> Result<Self> {
        let benchmark = WaveBenchmark::new(alpha, v_minus, v_plus, x_lo, x_hi, horizon, rel_tol)?;
        Ok(Self {
            benchmark: Arc::new(benchmark),
            x_lo,
            x_hi,
            k_rule,
            scheme,
        })
    }

    /// PDE problem for spatial step `h` (with `eps = r = 0`).
    pub fn problem(&self, h: f64) -> Result<PdeProblem> {
        let horizon = self.benchmark.horizon;
        let (n, m) = grid_size(self.x_hi - self.x_lo, horizon, h, self.k_rule.k(h))?;
        let dirichlet = |x: f64| -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
            let b = Arc::clone(&self.benchmark);
            Arc::new(move |tau| b.solution_at_tau(x, tau).unwrap_or(f64::NAN))
        };
        let b = Arc::clone(&self.benchmark);
        Ok(PdeProblem {
            epsilon: 0.0,
            r: 0.0,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            n_interior: n,
            m_steps: m,
            horizon,
            terminal: Arc::new(move |x| b.solution_at_tau(x, 0.0).unwrap_or(f64::NAN)),
            left_bc: BoundaryCondition::Dirichlet(dirichlet(self.x_lo)),
            right_bc: BoundaryCondition::Dirichlet(dirichlet(self.x_hi)),
            alpha: Arc::clone(&self.benchmark.alpha),
        })
    }

    /// Solves one level and measures its error against the wave.
    pub fn run_level(&self, h: f64) -> Result<(PhiField, ErrorReport)> {
        let problem = self.problem(h)?;
        let field = solve_pde(&problem, self.scheme)?;
        let (linf, l2) = discrete_norms(&field, |x, t| self.benchmark.solution_at(x, t))?;
        let report = ErrorReport {
            h: problem.h(),
            k: problem.k(),
            err_linf_l2: linf,
            err_l2_w12: l2,
            eoc_linf: None,
            eoc_l2: None,
            max_iterations: field.iterations.iter().copied().max().unwrap_or(0),
            clamped: field.clamped,
        };
        Ok((field, report))
    }

    /// Runs all levels (concurrently) and fills in successive EOCs.
    pub fn run(&self, levels: &[f64]) -> Result<Vec<ErrorReport>> {
        if levels.len() < 2 {
            return Err(Error::InvalidParams("an EOC study needs at least two levels".into()));
        }
        if !levels.windows(2).all(|w| w[1] < w[0]) || !(levels[levels.len() - 1] > 0.0) {
            return Err(Error::InvalidParams("levels must be positive and strictly decreasing".into()));
        }
        let reports = levels
            .par_iter()
            .map(|&h| self.run_level(h).map(|(_, r)| r))
            .collect::<Result<Vec<_>>>()?;
        Ok(with_eoc(reports))
    }
}

/// Fills `eoc_linf` / `eoc_l2` from consecutive reports.
pub fn with_eoc(mut reports: Vec<ErrorReport>) -> Vec<ErrorReport> {
    for i in 1..reports.len() {
        let (prev, cur) = (&reports[i - 1], &reports[i]);
        let linf = eoc(prev.err_linf_l2, cur.err_linf_l2, prev.h, cur.h);
        let l2 = eoc(prev.err_l2_w12, cur.err_l2_w12, prev.h, cur.h);
        reports[i].eoc_linf = linf;
        reports[i].eoc_l2 = l2;
    }
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_errors() {
        let e = vec![vec![0.0; 5]; 4];
        assert_eq!(error_norms(&e, 0.1, 0.01).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn constant_error_on_one_layer() {
        let (n, h, k, g) = (7, 0.1, 0.05, 0.3);
        let mut e = vec![vec![0.0; n]; 5];
        e[2] = vec![g; n];
        let (linf, l2) = error_norms(&e, h, k).unwrap();
        let expect = g * (h * n as f64).sqrt();
        assert!((linf - expect).abs() < 1e-15);
        // derivative term vanishes, so only the L2 part contributes
        assert!((l2 - (k * expect * expect).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn homogeneity() {
        let e: Vec<Vec<f64>> = (0..4).map(|j| (0..6).map(|i| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect()).collect();
        let (a, b) = error_norms(&e, 0.2, 0.1).unwrap();
        let s = -3.5;
        let scaled: Vec<Vec<f64>> = e.iter().map(|l| l.iter().map(|v| s * v).collect()).collect();
        let (a2, b2) = error_norms(&scaled, 0.2, 0.1).unwrap();
        assert!((a2 - s.abs() * a).abs() < 1e-12);
        assert!((b2 - s.abs() * b).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let e = vec![vec![0.0; 3], vec![0.0; 4]];
        assert!(matches!(error_norms(&e, 0.1, 0.1), Err(Error::ShapeMismatch(_))));
        assert!(matches!(error_norms(&[], 0.1, 0.1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn eoc_formula() {
        assert!((eoc(4e-3, 1e-3, 0.1, 0.05).unwrap() - 2.0).abs() < 1e-12);
        assert!((eoc(2e-3, 1e-3, 0.1, 0.05).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(eoc(0.0, 0.0, 0.1, 0.05), None);
        assert_eq!(eoc(1e-3, 0.0, 0.1, 0.05), None);
    }

    #[test]
    fn k_rule_parsing() {
        assert_eq!("0.1*h".parse::<KRule>().unwrap(), KRule::Linear(0.1));
        assert_eq!("10 * h^2".parse::<KRule>().unwrap(), KRule::Quadratic(10.0));
        assert_eq!("h".parse::<KRule>().unwrap(), KRule::Linear(1.0));
        assert!("0.1*x".parse::<KRule>().is_err());
        assert!("-1*h".parse::<KRule>().is_err());
        assert_eq!(KRule::Quadratic(10.0).to_string().parse::<KRule>().unwrap(), KRule::Quadratic(10.0));
        assert!((KRule::Quadratic(10.0).k(0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_sizing() {
        assert_eq!(grid_size(8.0, 10.0, 0.1, 0.01).unwrap(), (79, 1000));
        assert!(grid_size(8.0, 10.0, 0.0, 0.01).is_err());
        assert!(grid_size(1.0, 10.0, 0.5, 0.01).is_err());
    }
}
