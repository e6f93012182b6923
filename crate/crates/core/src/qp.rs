//! Parametric quadratic program over the simplex.
//!
//! For a risk parameter `phi > 0` the kernel solves
//!
//! ```text
//!     alpha(phi) = min  -mu' theta + (phi / 2) theta' Sigma theta
//!                  s.t. theta >= 0,  1' theta = 1      (Simplex)
//!                       theta >= 0,  1' theta <= 1     (MertonSimplex)
//! ```
//!
//! with a primal active-set method. Every working set is resolved with the
//! closed-form Lagrangian solution of the reduced problem (rows and columns of
//! the pinned assets removed), so the returned minimizer is exact up to the
//! Cholesky round-off of one principal submatrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, SquareMatrix};

/// Tolerance for primal feasibility of returned weights.
pub const FEAS_TOL: f64 = 1e-12;
/// Tolerance on Lagrangian gradient components (stationarity and dual sign).
pub const KKT_TOL: f64 = 1e-9;
/// A weight whose magnitude is at most this is reported as zero (active).
pub const ZERO_WEIGHT_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Expected returns and covariance of `n` assets.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    mu: Vec<f64>,
    sigma: SquareMatrix,
}

impl MarketModel {
    /// Validates dimensions, symmetry (absolute 1e-12) and positive definiteness.
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidModel("at least one asset is required".into()));
        }
        if sigma.len() != n || sigma.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!(
                "covariance must be {n}x{n} to match {n} expected returns"
            )));
        }
        if mu.iter().chain(sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entry".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (sigma[i][j] - sigma[j][i]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidModel(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sigma = SquareMatrix::from_rows(&sigma).expect("shape checked above");
        if let Err(pivot) = Cholesky::factor(&sigma) {
            return Err(Error::SingularModel(format!(
                "non-positive pivot at index {pivot}"
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &SquareMatrix {
        &self.sigma
    }

    /// Objective `-mu' theta + (phi/2) theta' Sigma theta`.
    pub fn objective(&self, phi: f64, theta: &[f64]) -> f64 {
        -dot(&self.mu, theta) + 0.5 * phi * self.sigma.quad_form(theta)
    }

    /// Same model with returns and covariance multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.mu.iter().map(|m| m * c).collect(),
            self.sigma.scaled(c).rows(),
        )
    }

    /// Lower bound `lambda-` of `alpha'`: half the minimum variance over the simplex.
    pub fn derivative_lower_bound(&self) -> Result<f64> {
        let zero = Self {
            mu: vec![0.0; self.n()],
            sigma: self.sigma.clone(),
        };
        // with mu = 0 and phi = 1 the optimal value is (1/2) min theta' Sigma theta
        Ok(solve_qp(&zero, 1.0, ConstraintSet::Simplex)?.value)
    }

    /// Upper bound `lambda+` of `alpha'`: half the largest diagonal entry.
    pub fn derivative_upper_bound(&self) -> f64 {
        0.5 * (0..self.n())
            .map(|i| self.sigma.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Feasible set of portfolio weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConstraintSet {
    /// `theta >= 0, 1' theta = 1`
    #[default]
    Simplex,
    /// `theta >= 0, 1' theta <= 1`
    MertonSimplex,
}

/// Minimizer of the parametric QP at one `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub phi: f64,
    pub theta: Vec<f64>,
    /// `alpha(phi)`
    pub value: f64,
    /// `alpha'(phi) = theta' Sigma theta / 2`
    pub derivative: f64,
    /// Sorted indices held at zero weight.
    pub active_set: Vec<usize>,
    /// Multiplier of the budget constraint (zero when the budget is slack).
    pub multiplier: f64,
    /// Whether `1' theta = 1` binds. Always true for [`ConstraintSet::Simplex`].
    pub budget_active: bool,
}

impl QpSolution {
    /// Lagrangian gradient `phi (Sigma theta)_i - mu_i - lambda`.
    pub fn kkt_residual(&self, model: &MarketModel) -> Vec<f64> {
        let s_theta = model.sigma.mul_vec(&self.theta);
        (0..model.n())
            .map(|i| self.phi * s_theta[i] - model.mu[i] - self.multiplier)
            .collect()
    }
}

/// Closed form of the equality-constrained problem on a fixed free set.
#[derive(Debug, Clone)]
pub(crate) struct ReducedForm {
    /// Free (non-pinned) indices, sorted.
    pub free: Vec<usize>,
    pub budget_active: bool,
    /// `Sigma_F^{-1} 1`
    pub inv_one: Vec<f64>,
    /// `Sigma_F^{-1} mu_F`
    pub inv_mu: Vec<f64>,
}

impl ReducedForm {
    pub(crate) fn new(model: &MarketModel, free: Vec<usize>, budget_active: bool) -> Result<Self> {
        if free.is_empty() {
            if budget_active {
                return Err(Error::InvalidParams(
                    "budget constraint cannot bind with every asset pinned to zero".into(),
                ));
            }
            return Ok(Self {
                free,
                budget_active,
                inv_one: Vec::new(),
                inv_mu: Vec::new(),
            });
        }
        let sub = model.sigma.principal(&free);
        let chol = Cholesky::factor(&sub).map_err(|p| {
            Error::SingularModel(format!(
                "principal submatrix on assets {free:?} failed at pivot {p}"
            ))
        })?;
        let mu_f: Vec<f64> = free.iter().map(|&i| model.mu[i]).collect();
        Ok(Self {
            inv_one: chol.solve(&vec![1.0; free.len()]),
            inv_mu: chol.solve(&mu_f),
            free,
            budget_active,
        })
    }

    fn sum_inv_one(&self) -> f64 {
        self.inv_one.iter().sum()
    }

    fn sum_inv_mu(&self) -> f64 {
        self.inv_mu.iter().sum()
    }

    /// Multiplier of the budget constraint at `phi`.
    pub(crate) fn multiplier(&self, phi: f64) -> f64 {
        if self.budget_active {
            (phi - self.sum_inv_mu()) / self.sum_inv_one()
        } else {
            0.0
        }
    }

    /// Minimizer on the free set at `phi`, scattered to full length `n`.
    pub(crate) fn theta(&self, n: usize, phi: f64) -> Vec<f64> {
        let lambda = self.multiplier(phi);
        let mut theta = vec![0.0; n];
        for (k, &i) in self.free.iter().enumerate() {
            theta[i] = (self.inv_mu[k] + lambda * self.inv_one[k]) / phi;
        }
        theta
    }

    /// Coefficients `(a, b, c)` of `alpha = a phi - b / phi + c` and the affine
    /// weight map `theta = a_vec - b_vec / phi`, full length `n`.
    pub(crate) fn coefficients(&self, n: usize, mu: &[f64]) -> (f64, f64, f64, Vec<f64>, Vec<f64>) {
        let mut a_vec = vec![0.0; n];
        let mut b_vec = vec![0.0; n];
        let mu_inv_mu: f64 = self
            .free
            .iter()
            .zip(&self.inv_mu)
            .map(|(&i, w)| mu[i] * w)
            .sum();
        if !self.budget_active {
            for (k, &i) in self.free.iter().enumerate() {
                b_vec[i] = -self.inv_mu[k];
            }
            return (0.0, (0.5 * mu_inv_mu).max(0.0), 0.0, a_vec, b_vec);
        }
        let s11 = self.sum_inv_one();
        let s1m = self.sum_inv_mu();
        for (k, &i) in self.free.iter().enumerate() {
            a_vec[i] = self.inv_one[k] / s11;
            b_vec[i] = -self.inv_mu[k] + s1m / s11 * self.inv_one[k];
        }
        let a = 0.5 / s11;
        // b >= 0 by Cauchy-Schwarz; clip round-off when mu is parallel to 1
        let b = (0.5 * mu_inv_mu - 0.5 * s1m * s1m / s11).max(0.0);
        let c = -s1m / s11;
        (a, b, c, a_vec, b_vec)
    }
}

fn finish(model: &MarketModel, phi: f64, theta: Vec<f64>, pinned: &[bool], lambda: f64, budget_active: bool) -> QpSolution {
    let s_theta = model.sigma.mul_vec(&theta);
    let variance = dot(&theta, &s_theta);
    let value = -dot(&model.mu, &theta) + 0.5 * phi * variance;
    let active_set = (0..model.n())
        .filter(|&i| pinned[i] || theta[i].abs() <= ZERO_WEIGHT_TOL)
        .collect();
    QpSolution {
        phi,
        theta,
        value,
        derivative: 0.5 * variance,
        active_set,
        multiplier: lambda,
        budget_active,
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositivePhi(phi))
    }
}

/// Unique global minimizer of the parametric QP at `phi`.
///
/// Primal active-set method seeded at the barycenter `theta = 1/n`. Ties between
/// blocking or releasable constraints go to the smallest index; the budget
/// constraint of [`ConstraintSet::MertonSimplex`] counts as index `n`.
pub fn solve_qp(model: &MarketModel, phi: f64, constraints: ConstraintSet) -> Result<QpSolution> {
    check_phi(phi)?;
    let n = model.n();
    let mut x = vec![1.0 / n as f64; n];
    let mut pinned = vec![false; n];
    let mut budget_active = true;
    let max_iters = 50 * (n + 1) + 100;

    for _ in 0..max_iters {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let form = ReducedForm::new(model, free, budget_active)?;
        let target = form.theta(n, phi);
        let lambda = form.multiplier(phi);

        // longest feasible step toward the working-set minimizer
        let mut step = 1.0;
        let mut blocking: Option<usize> = None;
        for i in 0..n {
            if pinned[i] {
                continue;
            }
            let p = target[i] - x[i];
            if p < 0.0 {
                let t = (x[i] / -p).max(0.0);
                if t < step {
                    step = t;
                    blocking = Some(i);
                }
            }
        }
        if constraints == ConstraintSet::MertonSimplex && !budget_active {
            let sx: f64 = x.iter().sum();
            let st: f64 = target.iter().sum();
            if st > 1.0 {
                let t = ((1.0 - sx) / (st - sx)).max(0.0);
                if t < step {
                    step = t;
                    blocking = Some(n);
                }
            }
        }

        match blocking {
            None => {
                x = target;
                // release the constraint with the most negative multiplier
                let grad = model.sigma.mul_vec(&x);
                let mut release: Option<usize> = None;
                let mut worst = KKT_TOL;
                for i in 0..n {
                    if pinned[i] {
                        let nu = phi * grad[i] - model.mu[i] - lambda;
                        if -nu > worst {
                            worst = -nu;
                            release = Some(i);
                        }
                    }
                }
                if constraints == ConstraintSet::MertonSimplex && budget_active && lambda > worst {
                    release = Some(n);
                }
                match release {
                    None => return Ok(finish(model, phi, x, &pinned, lambda, budget_active)),
                    Some(i) if i == n => budget_active = false,
                    Some(i) => pinned[i] = false,
                }
            }
            Some(b) => {
                for i in 0..n {
                    if !pinned[i] {
                        x[i] += step * (target[i] - x[i]);
                    }
                }
                if b == n {
                    budget_active = true;
                } else {
                    x[b] = 0.0;
                    pinned[b] = true;
                }
            }
        }
    }
    Err(Error::QpIterationLimit(max_iters))
}

/// Closed-form solution with the assets in `active_set` pinned to zero and the
/// budget binding. Inequality feasibility of the result is not checked.
pub fn solve_qp_active_set_direct(model: &MarketModel, phi: f64, active_set: &[usize]) -> Result<QpSolution> {
    check_phi(phi)?;
    let n = model.n();
    let mut pinned = vec![false; n];
    for &i in active_set {
        if i >= n {
            return Err(Error::InvalidParams(format!("active index {i} out of range for {n} assets")));
        }
        pinned[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
    if free.is_empty() {
        return Err(Error::InvalidParams("at most n-1 assets can be pinned".into()));
    }
    let form = ReducedForm::new(model, free, true)?;
    let theta = form.theta(n, phi);
    Ok(finish(model, phi, theta, &pinned, form.multiplier(phi), true))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model(mu: Vec<f64>) -> MarketModel {
        let n = mu.len();
        MarketModel::new(mu, SquareMatrix::identity(n).rows()).unwrap()
    }

    #[test]
    fn barycenter_for_identity_covariance() {
        let m = identity_model(vec![0.0; 3]);
        let s = solve_qp(&m, 2.0, ConstraintSet::Simplex).unwrap();
        for t in &s.theta {
            assert!((t - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((s.value - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.derivative - 1.0 / 6.0).abs() < 1e-15);
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn corner_solution_for_small_phi() {
        let m = identity_model(vec![1.0, 0.0]);
        let s = solve_qp(&m, 0.1, ConstraintSet::Simplex).unwrap();
        assert!((s.theta[0] - 1.0).abs() < 1e-15 && s.theta[1] == 0.0);
        assert!((s.value + 0.95).abs() < 1e-15);
        assert_eq!(s.active_set, vec![1]);
        // brute force on a 1e-5 lattice
        let best = (0..=100_000)
            .map(|k| {
                let t = k as f64 * 1e-5;
                m.objective(0.1, &[t, 1.0 - t])
            })
            .fold(f64::INFINITY, f64::min);
        assert!((best - s.value).abs() < 1e-12);
    }

    #[test]
    fn merton_keeps_full_investment_when_return_binds() {
        let m = identity_model(vec![1.0, 0.0]);
        let s = solve_qp(&m, 0.1, ConstraintSet::MertonSimplex).unwrap();
        assert!((s.theta[0] - 1.0).abs() < 1e-15 && s.theta[1] == 0.0);
        assert!(s.budget_active);
        // brute force over 0 <= t1 + t2 <= 1
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=(400 - i) {
                best = best.min(m.objective(0.1, &[i as f64 / 400.0, j as f64 / 400.0]));
            }
        }
        assert!((best - s.value).abs() < 1e-12);
    }

    #[test]
    fn merton_budget_goes_slack_for_high_risk_aversion() {
        let m = identity_model(vec![1.0, 0.5]);
        let s = solve_qp(&m, 10.0, ConstraintSet::MertonSimplex).unwrap();
        assert!(!s.budget_active);
        assert!((s.theta[0] - 0.1).abs() < 1e-15 && (s.theta[1] - 0.05).abs() < 1e-15);
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn merton_all_cash_when_returns_nonpositive() {
        let m = identity_model(vec![-1.0, -0.5]);
        let s = solve_qp(&m, 1.0, ConstraintSet::MertonSimplex).unwrap();
        assert_eq!(s.theta, vec![0.0, 0.0]);
        assert_eq!(s.active_set, vec![0, 1]);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn rejects_nonpositive_phi() {
        let m = identity_model(vec![0.0, 0.0]);
        assert_eq!(solve_qp(&m, 0.0, ConstraintSet::Simplex), Err(Error::NonPositivePhi(0.0)));
        assert!(solve_qp(&m, -1.0, ConstraintSet::Simplex).is_err());
        assert!(solve_qp_active_set_direct(&m, f64::NAN, &[]).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(matches!(
            MarketModel::new(vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![0.4, 1.0]]),
            Err(Error::InvalidModel(_))
        ));
        assert!(matches!(
            MarketModel::new(vec![0.0, 0.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(Error::SingularModel(_))
        ));
        assert!(MarketModel::new(vec![], vec![]).is_err());
        assert!(MarketModel::new(vec![0.0], vec![vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn direct_single_free_asset() {
        let m = identity_model(vec![0.0, 0.0]);
        for phi in [0.3, 1.0, 7.0] {
            let s = solve_qp_active_set_direct(&m, phi, &[1]).unwrap();
            assert_eq!(s.theta, vec![1.0, 0.0]);
            assert!((s.value - phi / 2.0).abs() < 1e-15);
            assert_eq!(s.active_set, vec![1]);
        }
    }

    #[test]
    fn direct_interior_matches_solver() {
        let m = identity_model(vec![0.0; 3]);
        let d = solve_qp_active_set_direct(&m, 2.0, &[]).unwrap();
        let s = solve_qp(&m, 2.0, ConstraintSet::Simplex).unwrap();
        assert_eq!(d, s);
    }

    #[test]
    fn direct_unconstrained_lands_on_boundary() {
        // theta = a - b/phi with a = (1/2, 1/2), b = (-1/2, 1/2)
        let m = identity_model(vec![1.0, 0.0]);
        let d = solve_qp_active_set_direct(&m, 1.0, &[]).unwrap();
        assert_eq!(d.theta, vec![1.0, 0.0]);
        assert_eq!(d.multiplier, 0.0);
    }

    #[test]
    fn direct_rejects_pinning_everything() {
        let m = identity_model(vec![0.0, 0.0]);
        assert!(solve_qp_active_set_direct(&m, 1.0, &[0, 1]).is_err());
        assert!(solve_qp_active_set_direct(&m, 1.0, &[5]).is_err());
    }

    #[test]
    fn derivative_bounds_for_diagonal_model() {
        let m = MarketModel::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        // min variance 3/4 at theta = (3/4, 1/4)
        assert!((m.derivative_lower_bound().unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(m.derivative_upper_bound(), 1.5);
    }

    #[test]
    fn kkt_residual_vanishes_on_free_assets() {
        let m = MarketModel::new(
            vec![0.3, 0.1, 0.2],
            vec![vec![0.5, 0.1, 0.0], vec![0.1, 0.2, 0.05], vec![0.0, 0.05, 0.3]],
        )
        .unwrap();
        for phi in [0.05, 0.5, 2.0, 20.0] {
            let s = solve_qp(&m, phi, ConstraintSet::Simplex).unwrap();
            let r = s.kkt_residual(&m);
            for i in 0..3 {
                if s.active_set.contains(&i) {
                    assert!(r[i] >= -KKT_TOL);
                } else {
                    assert!(r[i].abs() <= KKT_TOL);
                }
            }
            assert!((s.theta.iter().sum::<f64>() - 1.0).abs() <= FEAS_TOL);
        }
    }
}
