//! Exact piecewise-rational representation of the QP value function.
//!
//! On every interval of `phi` where the set of zero-weight assets is fixed,
//! the minimizer is `theta(phi) = a_vec - b_vec / phi` and the value is
//! `alpha(phi) = a phi - b / phi + c`. [`PiecewiseAlpha::build`] locates the
//! interval ends by scanning the QP kernel and refining each change of the
//! active set by bisection, then snaps each end to the exact root of the
//! left piece's feasibility or multiplier condition.

use crate::error::{Error, Result};
use crate::qp::{solve_qp, ConstraintSet, MarketModel, ReducedForm, ZERO_WEIGHT_TOL};

const SCAN_INTERVALS: usize = 1024;
/// Bisection stops once the bracket is this narrow.
pub const BREAKPOINT_RESOLUTION: f64 = 1e-8;

/// One interval `(lo, hi]` with a constant active set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPiece {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Sorted zero-weight assets on the piece.
    pub active_set: Vec<usize>,
    pub budget_active: bool,
    pub a_vec: Vec<f64>,
    pub b_vec: Vec<f64>,
}

impl AlphaPiece {
    #[inline]
    pub fn value(&self, phi: f64) -> f64 {
        self.a * phi - self.b / phi + self.c
    }

    #[inline]
    pub fn derivative(&self, phi: f64) -> f64 {
        self.a + self.b / (phi * phi)
    }

    #[inline]
    pub fn second_derivative(&self, phi: f64) -> f64 {
        -2.0 * self.b / (phi * phi * phi)
    }

    pub fn theta(&self, phi: f64) -> Vec<f64> {
        self.a_vec
            .iter()
            .zip(&self.b_vec)
            .map(|(a, b)| a - b / phi)
            .collect()
    }

    /// Positive root of `a phi^2 + (c - z) phi - b = 0`.
    fn inverse(&self, z: f64) -> f64 {
        let s = self.c - z;
        if self.b == 0.0 {
            return -s / self.a;
        }
        if self.a == 0.0 {
            return self.b / s;
        }
        let disc = (s * s + 4.0 * self.a * self.b).sqrt();
        // cancellation-free branch of the quadratic formula
        if s >= 0.0 {
            2.0 * self.b / (s + disc)
        } else {
            (disc - s) / (2.0 * self.a)
        }
    }
}

/// `alpha(phi)` on `[phi_min, phi_max]` as an ordered list of pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAlpha {
    pieces: Vec<AlphaPiece>,
    breakpoints: Vec<f64>,
    constraints: ConstraintSet,
}

type Signature = (Vec<usize>, bool);

fn signature(model: &MarketModel, phi: f64, constraints: ConstraintSet) -> Result<Signature> {
    let s = solve_qp(model, phi, constraints)?;
    Ok((s.active_set, s.budget_active))
}

impl PiecewiseAlpha {
    /// Builds the exact representation over `(phi_min, phi_max]`.
    pub fn build(model: &MarketModel, phi_min: f64, phi_max: f64, constraints: ConstraintSet) -> Result<Self> {
        if !(phi_min > 0.0) {
            return Err(Error::NonPositivePhi(phi_min));
        }
        if !(phi_min < phi_max) || !phi_max.is_finite() {
            return Err(Error::EmptyRange { lo: phi_min, hi: phi_max });
        }
        let step = (phi_max - phi_min) / SCAN_INTERVALS as f64;
        let grid: Vec<f64> = (0..=SCAN_INTERVALS)
            .map(|k| if k == SCAN_INTERVALS { phi_max } else { phi_min + k as f64 * step })
            .collect();
        let sigs = grid
            .iter()
            .map(|&p| signature(model, p, constraints))
            .collect::<Result<Vec<_>>>()?;

        let mut breakpoints = Vec::new();
        for k in 0..SCAN_INTERVALS {
            if sigs[k] != sigs[k + 1] {
                bisect(model, constraints, grid[k], &sigs[k], grid[k + 1], &sigs[k + 1], &mut breakpoints)?;
            }
        }
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        breakpoints.retain(|&b| b > phi_min && b < phi_max);

        let mut edges = Vec::with_capacity(breakpoints.len() + 2);
        edges.push(phi_min);
        edges.extend_from_slice(&breakpoints);
        edges.push(phi_max);

        let mut pieces: Vec<AlphaPiece> = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (active_set, budget_active) = signature(model, 0.5 * (lo + hi), constraints)?;
            if let Some(last) = pieces.last_mut() {
                if last.active_set == active_set && last.budget_active == budget_active {
                    last.hi = hi;
                    continue;
                }
            }
            pieces.push(make_piece(model, lo, hi, active_set, budget_active)?);
        }
        let breakpoints = pieces.iter().skip(1).map(|p| p.lo).collect();
        Ok(Self {
            pieces,
            breakpoints,
            constraints,
        })
    }

    /// Reassembles a representation from stored pieces; they must tile an interval.
    pub fn from_pieces(pieces: Vec<AlphaPiece>, constraints: ConstraintSet) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidParams("no pieces".into()));
        }
        for p in &pieces {
            if !(p.lo > 0.0 && p.lo < p.hi) || p.a < 0.0 || p.b < 0.0 || (p.a == 0.0 && p.b == 0.0) {
                return Err(Error::InvalidParams(format!("malformed piece ({}, {}]", p.lo, p.hi)));
            }
        }
        for w in pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::InvalidParams(format!(
                    "pieces do not tile: gap or overlap between {} and {}",
                    w[0].hi, w[1].lo
                )));
            }
        }
        let breakpoints = pieces.iter().skip(1).map(|p| p.lo).collect();
        Ok(Self {
            pieces,
            breakpoints,
            constraints,
        })
    }

    pub fn pieces(&self) -> &[AlphaPiece] {
        &self.pieces
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn constraints(&self) -> ConstraintSet {
        self.constraints
    }

    pub fn phi_min(&self) -> f64 {
        self.pieces[0].lo
    }

    pub fn phi_max(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].hi
    }

    /// Index of the piece holding `phi` under the `(lo, hi]` convention,
    /// clamped to the first/last piece outside the domain.
    pub fn piece_index(&self, phi: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < phi)
    }

    fn check_domain(&self, phi: f64) -> Result<()> {
        if phi >= self.phi_min() && phi <= self.phi_max() {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                phi,
                lo: self.phi_min(),
                hi: self.phi_max(),
            })
        }
    }

    /// `(alpha(phi), alpha'(phi))`; at a breakpoint both come from the left piece.
    pub fn eval(&self, phi: f64) -> Result<(f64, f64)> {
        self.check_domain(phi)?;
        Ok(self.eval_extended(phi))
    }

    /// Like [`eval`](Self::eval) but continues the end pieces' formulas beyond
    /// the domain instead of failing. `phi` must be positive.
    #[inline]
    pub fn eval_extended(&self, phi: f64) -> (f64, f64) {
        let p = &self.pieces[self.piece_index(phi)];
        (p.value(phi), p.derivative(phi))
    }

    pub fn second_derivative(&self, phi: f64) -> Result<f64> {
        self.check_domain(phi)?;
        Ok(self.pieces[self.piece_index(phi)].second_derivative(phi))
    }

    /// Optimal weights from the piece's affine form.
    pub fn theta(&self, phi: f64) -> Result<Vec<f64>> {
        self.check_domain(phi)?;
        Ok(self.pieces[self.piece_index(phi)].theta(phi))
    }

    /// Image `[alpha(phi_min), alpha(phi_max)]`.
    pub fn range(&self) -> (f64, f64) {
        let first = &self.pieces[0];
        let last = &self.pieces[self.pieces.len() - 1];
        (first.value(first.lo), last.value(last.hi))
    }

    /// `phi` with `alpha(phi) = z`.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(z >= lo && z <= hi) {
            return Err(Error::OutOfRange { value: z, lo, hi });
        }
        let k = self
            .pieces
            .partition_point(|p| p.value(p.hi) < z)
            .min(self.pieces.len() - 1);
        let p = &self.pieces[k];
        Ok(p.inverse(z).clamp(p.lo, p.hi))
    }

    /// Whether `phi` is at least `margin` away from every breakpoint.
    pub fn is_smooth_at(&self, phi: f64, margin: f64) -> bool {
        self.breakpoints.iter().all(|b| (b - phi).abs() > margin)
    }

    /// Assets with positive weight on at least one piece.
    pub fn held_assets(&self) -> Vec<usize> {
        let n = self.pieces[0].a_vec.len();
        (0..n)
            .filter(|i| self.pieces.iter().any(|p| !p.active_set.contains(i)))
            .collect()
    }
}

fn make_piece(model: &MarketModel, lo: f64, hi: f64, active_set: Vec<usize>, budget_active: bool) -> Result<AlphaPiece> {
    let n = model.n();
    let free = (0..n).filter(|i| !active_set.contains(i)).collect();
    let form = ReducedForm::new(model, free, budget_active)?;
    let (a, b, c, a_vec, b_vec) = form.coefficients(n, model.mu());
    Ok(AlphaPiece {
        lo,
        hi,
        a,
        b,
        c,
        active_set,
        budget_active,
        a_vec,
        b_vec,
    })
}

fn bisect(
    model: &MarketModel,
    constraints: ConstraintSet,
    lo: f64,
    sig_lo: &Signature,
    hi: f64,
    sig_hi: &Signature,
    out: &mut Vec<f64>,
) -> Result<()> {
    if hi - lo <= BREAKPOINT_RESOLUTION {
        out.push(refine(model, lo, hi, sig_lo)?);
        return Ok(());
    }
    let mid = 0.5 * (lo + hi);
    let sig_mid = signature(model, mid, constraints)?;
    if sig_mid != *sig_lo {
        bisect(model, constraints, lo, sig_lo, mid, &sig_mid, out)?;
    }
    if sig_mid != *sig_hi {
        bisect(model, constraints, mid, &sig_mid, hi, sig_hi, out)?;
    }
    Ok(())
}

/// Snaps a bracketed active-set change to the exact root of the left piece's
/// weight, multiplier or budget condition closest to the bracket.
fn refine(model: &MarketModel, lo: f64, hi: f64, sig_lo: &Signature) -> Result<f64> {
    let (active, budget_active) = sig_lo;
    let piece = make_piece(model, lo, hi, active.clone(), *budget_active)?;
    let n = model.n();
    let sigma = model.sigma();
    let s_a = sigma.mul_vec(&piece.a_vec);
    let s_b = sigma.mul_vec(&piece.b_vec);
    let mut candidates = Vec::new();
    for i in 0..n {
        if active.contains(&i) {
            // nu_i(phi) = phi ((S a)_i - 2a) - (S b)_i - mu_i - c, budget binding
            // nu_i(phi) = -(S b)_i - mu_i otherwise (constant)
            if *budget_active {
                let slope = s_a[i] - 2.0 * piece.a;
                if slope != 0.0 {
                    candidates.push((s_b[i] + model.mu()[i] + piece.c) / slope);
                }
            }
        } else if piece.a_vec[i] != 0.0 {
            candidates.push(piece.b_vec[i] / piece.a_vec[i]);
        }
    }
    if *budget_active && piece.a > 0.0 {
        candidates.push(-piece.c / (2.0 * piece.a));
    } else if !*budget_active {
        candidates.push(-piece.b_vec.iter().sum::<f64>());
    }
    let mid = 0.5 * (lo + hi);
    let slack = 2.0 * BREAKPOINT_RESOLUTION;
    Ok(candidates
        .into_iter()
        .filter(|p| p.is_finite() && *p >= lo - slack && *p <= hi + slack)
        .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
        .unwrap_or(mid))
}

/// Free-function form of [`PiecewiseAlpha::build`].
pub fn build_piecewise_alpha(
    model: &MarketModel,
    phi_min: f64,
    phi_max: f64,
    constraints: ConstraintSet,
) -> Result<PiecewiseAlpha> {
    PiecewiseAlpha::build(model, phi_min, phi_max, constraints)
}

/// Stock/bond parameters of the two-asset closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAssetParams {
    pub mu_s: f64,
    pub mu_b: f64,
    pub sigma_s: f64,
    pub sigma_b: f64,
    pub rho: f64,
}

impl TwoAssetParams {
    fn validate(&self) -> Result<()> {
        let ok = self.sigma_s > 0.0
            && self.sigma_b > 0.0
            && self.mu_s >= self.mu_b
            && self.mu_b >= 0.0
            && (-1.0..=1.0).contains(&self.rho)
            && self.sigma_b - self.rho * self.sigma_s >= 0.0
            && self.gamma() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("two-asset preconditions violated: {self:?}")))
        }
    }

    /// Variance of the stock-minus-bond spread.
    pub fn gamma(&self) -> f64 {
        self.sigma_s * self.sigma_s + self.sigma_b * self.sigma_b - 2.0 * self.sigma_s * self.sigma_b * self.rho
    }

    pub fn delta(&self) -> f64 {
        self.sigma_b * self.sigma_b - self.sigma_s * self.sigma_b * self.rho
    }

    pub fn omega(&self) -> f64 {
        (self.mu_s - self.mu_b) / self.gamma()
    }

    /// Returns `(alpha(phi), theta_stock(phi))`.
    pub fn alpha(&self, phi: f64) -> Result<(f64, f64)> {
        self.validate()?;
        if !(phi > 0.0) {
            return Err(Error::NonPositivePhi(phi));
        }
        let (gamma, delta, omega) = (self.gamma(), self.delta(), self.omega());
        let unconstrained = omega / phi + delta / gamma;
        if unconstrained < 1.0 {
            let ss = self.sigma_s * self.sigma_b;
            let alpha = -self.mu_b - omega * delta - omega * omega * gamma / (2.0 * phi)
                + 0.5 * phi * (1.0 - self.rho * self.rho) * ss * ss / gamma;
            Ok((alpha, unconstrained))
        } else {
            Ok((0.5 * self.sigma_s * self.sigma_s * phi - self.mu_s, 1.0))
        }
    }

    /// Breakpoint `omega gamma / (gamma - delta)` between the stock-only and mixed regimes.
    pub fn breakpoint(&self) -> Option<f64> {
        let (gamma, delta) = (self.gamma(), self.delta());
        let b = self.omega() * gamma / (gamma - delta);
        (gamma > delta && b > 0.0).then_some(b)
    }

    /// The induced 2x2 model (stock first).
    pub fn model(&self) -> Result<MarketModel> {
        let cov = self.rho * self.sigma_s * self.sigma_b;
        MarketModel::new(
            vec![self.mu_s, self.mu_b],
            vec![
                vec![self.sigma_s * self.sigma_s, cov],
                vec![cov, self.sigma_b * self.sigma_b],
            ],
        )
    }
}

/// Free-function form of [`TwoAssetParams::alpha`].
pub fn alpha_two_asset(params: &TwoAssetParams, phi: f64) -> Result<(f64, f64)> {
    params.alpha(phi)
}

/// Weights from the piece lookup, or `None` when `phi` leaves the domain.
pub(crate) fn piece_theta(pw: &PiecewiseAlpha, phi: f64) -> Option<(Vec<f64>, Vec<usize>)> {
    if phi < pw.phi_min() || phi > pw.phi_max() {
        return None;
    }
    let p = &pw.pieces[pw.piece_index(phi)];
    let theta = p
        .theta(phi)
        .into_iter()
        .map(|t| if t.abs() <= ZERO_WEIGHT_TOL { 0.0 } else { t })
        .collect();
    Some((theta, p.active_set.clone()))
}
