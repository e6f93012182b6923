//! Riccati-transformed HJB solver for constrained dynamic portfolio allocation.
//!
//! The Hamilton-Jacobi-Bellman equation of a dynamic allocation problem over the
//! simplex of portfolio weights is transformed, via `phi = 1 - V_xx / V_x`, into
//! the quasi-linear parabolic equation
//!
//! ```text
//!     phi_t + (alpha(phi))_xx + ((eps e^{-x} + r) phi + (1 - phi) alpha(phi))_x = 0
//! ```
//!
//! where `alpha` is the value function of a parametric quadratic program. This
//! crate computes `alpha` exactly ([`alpha`]), solves the PDE by finite volumes
//! ([`pde`]), builds a traveling-wave benchmark ([`wave`]), measures convergence
//! ([`verification`]) and turns market data into optimal strategies ([`portfolio`]).

pub mod alpha;
pub mod data;
pub mod error;
pub mod linalg;
pub mod pde;
pub mod portfolio;
pub mod qp;
pub mod verification;
pub mod wave;

pub use alpha::{alpha_two_asset, build_piecewise_alpha, AlphaPiece, PiecewiseAlpha, TwoAssetParams};
pub use error::{Error, Result};
pub use qp::{solve_qp, solve_qp_active_set_direct, ConstraintSet, MarketModel, QpSolution};
pub use wave::{integrate_profile, ode_rhs, wave_parameters, wave_solution_at, Profile, WaveBenchmark, WaveParameters};
pub use verification::{discrete_norms, eoc, error_norms, EocStudy, ErrorReport, KRule};
pub use portfolio::{cara_terminal, estimate_moments, extract_strategy, run_pipeline, PipelineConfig, PipelineOutput, PriceHistory, StrategySurface};
