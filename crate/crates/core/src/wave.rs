//! Semi-explicit traveling wave `phi(x, t) = v(x + c (T - t))` for `eps = r = 0`.
//!
//! With `z = alpha(v)` the profile solves `z' = F(z)`,
//! `F(z) = K0 + c beta(z) - z + z beta(z)` where `beta` inverts `alpha`. The
//! limits `v-` (as `xi -> +inf`) and `v+` (as `xi -> -inf`) fix the speed `c`
//! and intercept `K0`; the profile is anchored at `z(0) = (z- + z+) / 2`.

use std::sync::Arc;

use crate::alpha::PiecewiseAlpha;
use crate::error::{Error, Result};

/// Default relative tolerance of the profile integrator.
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Largest integration step, which is also the sample spacing bound.
const MAX_STEP: f64 = 5e-3;
const MIN_STEP: f64 = 1e-14;
/// Closer than this to a stationary point the profile is continued as a constant.
const STATIONARY_PAD: f64 = 1e-12;
/// Limits this close to a breakpoint of `alpha` are rejected.
const SMOOTH_MARGIN: f64 = 1e-9;

/// Speed, intercept and limits of a wave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParameters {
    pub v_minus: f64,
    pub v_plus: f64,
    pub c: f64,
    pub k0: f64,
    pub z_minus: f64,
    pub z_plus: f64,
}

/// `G(v) = K0 + c v - alpha(v) (1 - v)`
pub fn g_function(alpha: &PiecewiseAlpha, c: f64, k0: f64, v: f64) -> Result<f64> {
    let (a, _) = alpha.eval(v)?;
    Ok(k0 + c * v - a * (1.0 - v))
}

/// `(c, K0)` such that `G(v-) = G(v+) = 0`.
pub fn wave_parameters(alpha: &PiecewiseAlpha, v_minus: f64, v_plus: f64) -> Result<(f64, f64)> {
    let p = WaveParameters::new(alpha, v_minus, v_plus)?;
    Ok((p.c, p.k0))
}

impl WaveParameters {
    pub fn new(alpha: &PiecewiseAlpha, v_minus: f64, v_plus: f64) -> Result<Self> {
        if !(v_minus > 0.0 && v_minus < v_plus) {
            return Err(Error::InvalidLimits(format!(
                "need 0 < v- < v+, got v- = {v_minus}, v+ = {v_plus}"
            )));
        }
        for v in [v_minus, v_plus] {
            if v <= alpha.phi_min() || v >= alpha.phi_max() {
                return Err(Error::InvalidLimits(format!(
                    "limit {v} outside the interior of alpha's domain [{}, {}]",
                    alpha.phi_min(),
                    alpha.phi_max()
                )));
            }
            if !alpha.is_smooth_at(v, SMOOTH_MARGIN) {
                return Err(Error::InvalidLimits(format!("limit {v} sits on a breakpoint of alpha")));
            }
        }
        let (z_minus, _) = alpha.eval(v_minus)?;
        let (z_plus, _) = alpha.eval(v_plus)?;
        let h_minus = z_minus * (1.0 - v_minus);
        let h_plus = z_plus * (1.0 - v_plus);
        let c = (h_plus - h_minus) / (v_plus - v_minus);
        let k0 = -c * v_plus + h_plus;
        Ok(Self {
            v_minus,
            v_plus,
            c,
            k0,
            z_minus,
            z_plus,
        })
    }

    /// `F(z)` for `z` in `[z-, z+]`.
    pub fn rhs(&self, alpha: &PiecewiseAlpha, z: f64) -> Result<f64> {
        let slack = 1e-12 * (self.z_plus - self.z_minus).abs().max(1.0);
        if !(z >= self.z_minus - slack && z <= self.z_plus + slack) {
            return Err(Error::OutOfRange {
                value: z,
                lo: self.z_minus,
                hi: self.z_plus,
            });
        }
        self.rhs_unchecked(alpha, z)
    }

    fn rhs_unchecked(&self, alpha: &PiecewiseAlpha, z: f64) -> Result<f64> {
        let v = alpha.inverse(z)?;
        Ok(self.k0 + self.c * v - z + z * v)
    }
}

/// Free-function form of [`WaveParameters::rhs`].
pub fn ode_rhs(alpha: &PiecewiseAlpha, params: &WaveParameters, z: f64) -> Result<f64> {
    params.rhs(alpha, z)
}

/// Sampled profile with exact slopes at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Increasing.
    pub xi: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// `dv/dxi = F(z) / alpha'(v)`
    pub slope: Vec<f64>,
}

impl Profile {
    /// Monotone cubic Hermite interpolation of `v` at `xi`.
    pub fn eval(&self, xi: f64) -> Result<f64> {
        let n = self.xi.len();
        let (lo, hi) = (self.xi[0], self.xi[n - 1]);
        let tol = 1e-9 * (hi - lo).max(1.0);
        if !(xi >= lo - tol && xi <= hi + tol) {
            return Err(Error::OutOfRange { value: xi, lo, hi });
        }
        let xi = xi.clamp(lo, hi);
        let k = self.xi.partition_point(|&s| s <= xi).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.xi[k], self.xi[k + 1]);
        let (y0, y1) = (self.v[k], self.v[k + 1]);
        let w = x1 - x0;
        let delta = (y1 - y0) / w;
        let (mut m0, mut m1) = (self.slope[k], self.slope[k + 1]);
        if delta == 0.0 {
            m0 = 0.0;
            m1 = 0.0;
        } else {
            // Fritsch-Carlson limiter
            let (a, b) = (m0 / delta, m1 / delta);
            if a < 0.0 {
                m0 = 0.0;
            }
            if b < 0.0 {
                m1 = 0.0;
            }
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                m0 = t * a * delta;
                m1 = t * b * delta;
            }
        }
        let t = (xi - x0) / w;
        let t2 = t * t;
        let t3 = t2 * t;
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * w * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * w * m1)
    }
}

struct Integrator<'a> {
    alpha: &'a PiecewiseAlpha,
    params: WaveParameters,
    rel_tol: f64,
    /// `alpha` at the breakpoints strictly inside `(v-, v+)`.
    levels: Vec<f64>,
}

impl Integrator<'_> {
    fn f(&self, z: f64) -> Result<f64> {
        self.params.rhs_unchecked(self.alpha, z)
    }

    fn rk4(&self, z: f64, h: f64) -> Result<f64> {
        let k1 = self.f(z)?;
        let k2 = self.f(z + 0.5 * h * k1)?;
        let k3 = self.f(z + 0.5 * h * k2)?;
        let k4 = self.f(z + h * k3)?;
        Ok(z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    /// Integrates from `(0, z0)` to `xi_end` (either sign); returns samples in
    /// integration order, excluding the start.
    fn run(&self, z0: f64, xi_end: f64) -> Result<Vec<(f64, f64)>> {
        let dir = if xi_end >= 0.0 { 1.0 } else { -1.0 };
        // forward in xi the profile descends toward z-, backward it climbs to z+
        let limit = if dir > 0.0 { self.params.z_minus } else { self.params.z_plus };
        let scale = (self.params.z_plus - self.params.z_minus).abs();
        let mut out = Vec::new();
        let (mut xi, mut z) = (0.0_f64, z0);
        let mut step = MAX_STEP;
        while dir * (xi_end - xi) > 0.0 {
            if (z - limit).abs() < STATIONARY_PAD {
                out.push((xi_end, limit));
                break;
            }
            let remaining = dir * (xi_end - xi);
            // absorb a sliver of leftover range into this step
            let hs = if remaining <= 1.01 * step { remaining } else { step };
            let full = self.rk4(z, dir * hs)?;
            let mid = self.rk4(z, 0.5 * dir * hs)?;
            let half = self.rk4(mid, 0.5 * dir * hs)?;
            let err = (half - full).abs() / 15.0;
            let tol = self.rel_tol * half.abs().max(scale);
            if err > tol {
                step = hs * (0.9 * (tol / err).powf(0.2)).max(0.1);
                if step < MIN_STEP {
                    return Err(Error::StiffnessFailure { xi });
                }
                continue;
            }
            let crossed = self
                .levels
                .iter()
                .copied()
                .find(|&lv| (z - lv) * (half - lv) < 0.0);
            let (taken, z_new) = match crossed {
                // land exactly on the kink of alpha so no step straddles it
                Some(lv) => (self.step_to_level(z, dir, hs, lv)?, lv),
                None => (hs, half),
            };
            xi = if taken == remaining { xi_end } else { xi + dir * taken };
            z = z_new;
            out.push((xi, z));
            let grow = if err == 0.0 { 4.0 } else { (0.9 * (tol / err).powf(0.2)).min(4.0) };
            step = (hs * grow).min(MAX_STEP);
        }
        Ok(out)
    }

    /// Step length reaching `level` from `z` with one RK4 step, by bisection.
    fn step_to_level(&self, z: f64, dir: f64, hs: f64, level: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, hs);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let zm = self.rk4(z, dir * mid)?;
            if (z - level) * (zm - level) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Integrates the profile over `[xi_lo, xi_hi]` (extended to contain 0).
pub fn integrate_profile(
    alpha: &PiecewiseAlpha,
    params: &WaveParameters,
    xi_lo: f64,
    xi_hi: f64,
    rel_tol: f64,
) -> Result<Profile> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParams(format!("rel_tol must be positive, got {rel_tol}")));
    }
    if !(xi_lo < xi_hi) {
        return Err(Error::InvalidParams(format!("empty profile range [{xi_lo}, {xi_hi}]")));
    }
    let levels = alpha
        .breakpoints()
        .iter()
        .filter(|&&b| b > params.v_minus && b < params.v_plus)
        .map(|&b| alpha.eval(b).map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    let integ = Integrator {
        alpha,
        params: *params,
        rel_tol,
        levels,
    };
    let z0 = 0.5 * (params.z_minus + params.z_plus);
    let backward = integ.run(z0, xi_lo.min(0.0))?;
    let forward = integ.run(z0, xi_hi.max(0.0))?;

    let mut points: Vec<(f64, f64)> = backward.into_iter().rev().collect();
    points.push((0.0, z0));
    points.extend(forward);

    let mut profile = Profile {
        xi: Vec::with_capacity(points.len()),
        z: Vec::with_capacity(points.len()),
        v: Vec::with_capacity(points.len()),
        slope: Vec::with_capacity(points.len()),
    };
    for (xi, z) in points {
        let v = alpha.inverse(z)?;
        let (_, alpha_prime) = alpha.eval(v)?;
        let dz = integ.f(z)?;
        profile.xi.push(xi);
        profile.z.push(z);
        profile.v.push(v);
        profile.slope.push(dz / alpha_prime);
    }
    Ok(profile)
}

/// Traveling-wave solution used as the convergence reference.
#[derive(Debug, Clone)]
pub struct WaveBenchmark {
    pub params: WaveParameters,
    pub profile: Profile,
    pub horizon: f64,
    pub alpha: Arc<PiecewiseAlpha>,
}

impl WaveBenchmark {
    /// Builds the wave and samples its profile over every `xi = x + c tau`
    /// with `x` in `[x_lo, x_hi]` and `tau` in `[0, horizon]`.
    pub fn new(
        alpha: Arc<PiecewiseAlpha>,
        v_minus: f64,
        v_plus: f64,
        x_lo: f64,
        x_hi: f64,
        horizon: f64,
        rel_tol: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !(x_lo < x_hi) {
            return Err(Error::InvalidParams("need x_lo < x_hi and a positive horizon".into()));
        }
        let params = WaveParameters::new(&alpha, v_minus, v_plus)?;
        let travel = params.c * horizon;
        let xi_lo = x_lo.min(x_lo + travel);
        let xi_hi = x_hi.max(x_hi + travel);
        let profile = integrate_profile(&alpha, &params, xi_lo, xi_hi, rel_tol)?;
        Ok(Self {
            params,
            profile,
            horizon,
            alpha,
        })
    }

    /// `v(xi)`
    pub fn profile_at(&self, xi: f64) -> Result<f64> {
        self.profile.eval(xi)
    }

    /// `phi(x, t) = v(x + c (T - t))` in calendar time `t`.
    pub fn solution_at(&self, x: f64, t: f64) -> Result<f64> {
        self.profile.eval(x + self.params.c * (self.horizon - t))
    }

    /// Same in forward time `tau = T - t`.
    pub fn solution_at_tau(&self, x: f64, tau: f64) -> Result<f64> {
        self.profile.eval(x + self.params.c * tau)
    }
}

/// Free-function form of [`WaveBenchmark::solution_at`] with an explicit horizon.
pub fn wave_solution_at(bench: &WaveBenchmark, x: f64, t: f64, horizon: f64) -> Result<f64> {
    bench.profile.eval(x + bench.params.c * (horizon - t))
}
