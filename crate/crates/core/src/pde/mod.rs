//! Finite-volume solver for the transformed quasi-linear parabolic equation.
//!
//! The backward problem is marched in forward time `tau = T - t`:
//!
//! ```text
//!     phi_tau = (A(phi))_xx + (B(phi, x))_x + C,
//!     A = alpha(phi),  B = (eps e^{-x} + r) phi + alpha(phi) (1 - phi),  C = 0
//! ```
//!
//! on the nodes `x_i = x_lo + i h`, `i = 0..=n+1`, `h = (x_hi - x_lo) / (n + 1)`.
//! Nodes `1..=n` are finite-volume cell centers; nodes `0` and `n + 1` are ghost
//! values tied to the interior by the discrete boundary conditions.

mod scheme;
mod thomas;

use std::fmt;
use std::sync::Arc;

pub use scheme::{solve_pde, step_fully_implicit, step_semi_implicit, Scheme, StepOutcome};
pub use thomas::{thomas_solve, MIN_PIVOT};

use crate::alpha::PiecewiseAlpha;
use crate::error::{Error, Result};

/// Default stopping tolerance of the micro-iterations.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default cap on micro-iterations per time step.
pub const DEFAULT_MAX_ITERS: usize = 100;
/// Floor applied to non-positive iterates before evaluating `alpha`.
pub const CLAMP_FLOOR: f64 = 1e-6;
/// Slack on the upper comparison bound.
pub const BOUND_SLACK: f64 = 1e-6;

/// Shared scalar function (terminal data, boundary data).
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Boundary condition at one end of the domain.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// Prescribed value as a function of forward time `tau`.
    Dirichlet(ScalarFn),
    /// `phi_x = d phi`
    Robin(f64),
    /// `phi_x = 0`
    Neumann,
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dirichlet(_) => f.write_str("Dirichlet(..)"),
            Self::Robin(d) => write!(f, "Robin({d})"),
            Self::Neumann => f.write_str("Neumann"),
        }
    }
}

impl BoundaryCondition {
    /// Coefficients `(L, M)` of the ghost relation `phi_0 = L phi_L + M phi_1`.
    pub fn coefficients(&self, h: f64) -> (f64, f64) {
        match self {
            Self::Dirichlet(_) => (1.0, 0.0),
            Self::Robin(d) => (0.0, 1.0 / (1.0 + d * h)),
            Self::Neumann => (0.0, 1.0),
        }
    }

    /// Prescribed boundary value at `tau` (zero for the homogeneous kinds).
    pub fn boundary_value(&self, tau: f64) -> f64 {
        match self {
            Self::Dirichlet(g) => g(tau),
            _ => 0.0,
        }
    }

    /// Ghost value given the adjacent interior value.
    pub fn ghost(&self, tau: f64, h: f64, inner: f64) -> f64 {
        let (l, m) = self.coefficients(h);
        l * self.boundary_value(tau) + m * inner
    }
}

/// Coefficients of the general quasi-linear form `A`, `B`, `C` for this model.
#[derive(Clone)]
pub struct FluxTerms {
    pub epsilon: f64,
    pub r: f64,
    pub alpha: Arc<PiecewiseAlpha>,
}

/// `D = dA/dphi`, `E = dA/dx`, `F = B` at one cell face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceCoefficients {
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl FluxTerms {
    #[inline]
    pub fn face(&self, phi: f64, x: f64) -> FaceCoefficients {
        let (alpha, alpha_prime) = self.alpha.eval_extended(phi);
        FaceCoefficients {
            d: alpha_prime,
            // A = alpha(phi) carries no explicit x dependence
            e: 0.0,
            f: (self.epsilon * (-x).exp() + self.r) * phi + alpha * (1.0 - phi),
        }
    }

    /// Source term `C`.
    #[inline]
    pub fn source(&self, _phi: f64, _x: f64) -> f64 {
        0.0
    }
}

/// Discretized backward Cauchy problem on a bounded interval.
#[derive(Clone)]
pub struct PdeProblem {
    pub epsilon: f64,
    pub r: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_interior: usize,
    pub m_steps: usize,
    pub horizon: f64,
    /// `x -> phi(x, T)`
    pub terminal: ScalarFn,
    pub left_bc: BoundaryCondition,
    pub right_bc: BoundaryCondition,
    pub alpha: Arc<PiecewiseAlpha>,
}

impl fmt::Debug for PdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeProblem")
            .field("epsilon", &self.epsilon)
            .field("r", &self.r)
            .field("x_lo", &self.x_lo)
            .field("x_hi", &self.x_hi)
            .field("n_interior", &self.n_interior)
            .field("m_steps", &self.m_steps)
            .field("horizon", &self.horizon)
            .field("left_bc", &self.left_bc)
            .field("right_bc", &self.right_bc)
            .finish_non_exhaustive()
    }
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.x_lo < self.x_hi) {
            return bad(format!("x_lo = {} must be below x_hi = {}", self.x_lo, self.x_hi));
        }
        if self.n_interior < 2 {
            return bad(format!("need at least 2 interior cells, got {}", self.n_interior));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.epsilon >= 0.0) || !(self.r >= 0.0) {
            return bad("epsilon and r must be non-negative".into());
        }
        for i in 0..self.n_interior + 2 {
            let v = (self.terminal)(self.x(i));
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("terminal condition {v} at x = {} is not positive and finite", self.x(i)));
            }
        }
        Ok(())
    }

    /// Spatial step `h`.
    pub fn h(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_interior + 1) as f64
    }

    /// Time step `k` (zero when `m_steps == 0`).
    pub fn k(&self) -> f64 {
        if self.m_steps == 0 {
            0.0
        } else {
            self.horizon / self.m_steps as f64
        }
    }

    /// Node `i` in `0..=n+1`.
    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.h()
    }

    pub fn tau(&self, j: usize) -> f64 {
        j as f64 * self.k()
    }

    pub fn flux_terms(&self) -> FluxTerms {
        FluxTerms {
            epsilon: self.epsilon,
            r: self.r,
            alpha: Arc::clone(&self.alpha),
        }
    }

    /// Terminal layer with ghost nodes set by the boundary conditions at `tau = 0`.
    pub fn initial_layer(&self) -> Vec<f64> {
        let n = self.n_interior;
        let mut layer: Vec<f64> = (0..n + 2).map(|i| (self.terminal)(self.x(i))).collect();
        self.apply_bc(&mut layer, 0.0);
        layer
    }

    /// Sets both ghost nodes from the interior.
    pub fn apply_bc(&self, layer: &mut [f64], tau: f64) {
        let n = self.n_interior;
        let h = self.h();
        layer[0] = self.left_bc.ghost(tau, h, layer[1]);
        layer[n + 1] = self.right_bc.ghost(tau, h, layer[n]);
    }
}

/// Computed `phi` on all time layers, in forward time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiField {
    /// Row-major `(m + 1) x (n + 2)`.
    values: Vec<f64>,
    /// Node coordinates including both ghost nodes.
    pub grid: Vec<f64>,
    /// Forward times `tau_j`.
    pub times: Vec<f64>,
    pub horizon: f64,
    /// Micro-iterations per step (all 1 for the semi-implicit scheme).
    pub iterations: Vec<usize>,
    /// Number of face evaluations clamped to [`CLAMP_FLOOR`].
    pub clamped: usize,
    pub warnings: Vec<String>,
}

impl PhiField {
    pub fn new(grid: Vec<f64>, horizon: f64) -> Self {
        Self {
            values: Vec::new(),
            grid,
            times: Vec::new(),
            horizon,
            iterations: Vec::new(),
            clamped: 0,
            warnings: Vec::new(),
        }
    }

    pub fn push_layer(&mut self, tau: f64, layer: &[f64]) {
        assert_eq!(layer.len(), self.grid.len(), "layer width");
        self.values.extend_from_slice(layer);
        self.times.push(tau);
    }

    pub fn width(&self) -> usize {
        self.grid.len()
    }

    pub fn n_interior(&self) -> usize {
        self.grid.len() - 2
    }

    pub fn n_layers(&self) -> usize {
        self.times.len()
    }

    /// Layer `j` including ghost nodes.
    pub fn layer(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.values[j * w..(j + 1) * w]
    }

    /// Interior cells of layer `j`.
    pub fn interior(&self, j: usize) -> &[f64] {
        let l = self.layer(j);
        &l[1..l.len() - 1]
    }

    pub fn last_layer(&self) -> &[f64] {
        self.layer(self.n_layers() - 1)
    }

    /// Spatial step.
    pub fn h(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Time step (zero for a single layer).
    pub fn k(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Calendar time `t = T - tau` of layer `j`.
    pub fn t(&self, j: usize) -> f64 {
        self.horizon - self.times[j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_interior(&self) -> f64 {
        (0..self.n_layers())
            .flat_map(|j| self.interior(j).iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_interior(&self) -> f64 {
        (0..self.n_layers())
            .flat_map(|j| self.interior(j).iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}
