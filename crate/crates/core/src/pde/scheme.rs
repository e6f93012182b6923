use super::{thomas_solve, PdeProblem, PhiField, BOUND_SLACK, CLAMP_FLOOR, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::error::{Error, Result};

/// Time discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Coefficients frozen at the old layer, gradients at the new one.
    SemiImplicit,
    /// All terms at the new layer, resolved by micro-iterations.
    FullyImplicit { tol: f64, max_iters: usize },
}

impl Scheme {
    pub fn fully_implicit() -> Self {
        Scheme::FullyImplicit {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Result of advancing one time layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// New layer with ghost nodes.
    pub layer: Vec<f64>,
    pub iterations: usize,
    /// Face evaluations that needed clamping.
    pub clamped: usize,
}

/// Assembles and solves the tridiagonal system for one layer.
///
/// `coeff` supplies the face values for `D`, `E`, `F` (old layer for the
/// semi-implicit scheme, previous iterate for the fully implicit one), `old`
/// is the layer `j` being advanced and `tau_new` the time of layer `j + 1`.
fn linear_solve(problem: &PdeProblem, coeff: &[f64], old: &[f64], tau_new: f64, clamped: &mut usize) -> Result<Vec<f64>> {
    let n = problem.n_interior;
    let h = problem.h();
    let k = problem.k();
    let ratio = k / (h * h);
    let terms = problem.flux_terms();

    // faces f = 0..=n sit between nodes f and f + 1
    let mut d = Vec::with_capacity(n + 1);
    let mut ef = Vec::with_capacity(n + 1);
    for f in 0..=n {
        let mut phi = 0.5 * (coeff[f] + coeff[f + 1]);
        if phi <= 0.0 {
            phi = CLAMP_FLOOR;
            *clamped += 1;
        }
        let c = terms.face(phi, problem.x_lo + (f as f64 + 0.5) * h);
        d.push(c.d);
        ef.push(c.e + c.f);
    }

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for row in 0..n {
        let i = row + 1;
        let (dm, dp) = (d[i - 1], d[i]);
        lower[row] = -ratio * dm;
        upper[row] = -ratio * dp;
        diag[row] = 1.0 + ratio * (dm + dp);
        // midpoint rule for the source: (k/h) * h C
        let source = k * terms.source(coeff[i], problem.x(i));
        rhs[row] = old[i] + k / h * (ef[i] - ef[i - 1]) + source;
    }

    let (l_coef, m_coef) = problem.left_bc.coefficients(h);
    diag[0] += lower[0] * m_coef;
    rhs[0] -= lower[0] * l_coef * problem.left_bc.boundary_value(tau_new);
    lower[0] = 0.0;
    let (r_coef, n_coef) = problem.right_bc.coefficients(h);
    diag[n - 1] += upper[n - 1] * n_coef;
    rhs[n - 1] -= upper[n - 1] * r_coef * problem.right_bc.boundary_value(tau_new);
    upper[n - 1] = 0.0;

    let interior = thomas_solve(&lower, &diag, &upper, &rhs)?;
    let mut layer = Vec::with_capacity(n + 2);
    layer.push(0.0);
    layer.extend(interior);
    layer.push(0.0);
    problem.apply_bc(&mut layer, tau_new);
    Ok(layer)
}

fn check_positive(layer: &[f64]) -> Result<()> {
    let n = layer.len() - 2;
    match (1..=n).find(|&i| !(layer[i] > 0.0)) {
        Some(cell) => Err(Error::NonPositiveCell {
            cell,
            value: layer[cell],
        }),
        None => Ok(()),
    }
}

/// Advances layer `j` (with ghost nodes) to `j + 1` with the semi-implicit scheme.
pub fn step_semi_implicit(problem: &PdeProblem, layer: &[f64], j: usize) -> Result<StepOutcome> {
    check_width(problem, layer)?;
    let mut clamped = 0;
    let new = linear_solve(problem, layer, layer, problem.tau(j + 1), &mut clamped)?;
    check_positive(&new)?;
    Ok(StepOutcome {
        layer: new,
        iterations: 1,
        clamped,
    })
}

/// Advances layer `j` to `j + 1` with the fully implicit scheme, iterating
/// until two consecutive iterates differ by less than `tol` in max norm.
pub fn step_fully_implicit(problem: &PdeProblem, layer: &[f64], j: usize, tol: f64, max_iters: usize) -> Result<StepOutcome> {
    check_width(problem, layer)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
    }
    let tau_new = problem.tau(j + 1);
    let mut clamped = 0;
    let mut iterate = layer.to_vec();
    problem.apply_bc(&mut iterate, tau_new);
    let mut last_diff = f64::INFINITY;
    for it in 1..=max_iters {
        let next = linear_solve(problem, &iterate, layer, tau_new, &mut clamped)?;
        last_diff = next[1..=problem.n_interior]
            .iter()
            .zip(&iterate[1..=problem.n_interior])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        iterate = next;
        if last_diff < tol {
            check_positive(&iterate)?;
            return Ok(StepOutcome {
                layer: iterate,
                iterations: it,
                clamped,
            });
        }
    }
    Err(Error::NoConvergence { max_iters, last_diff })
}

fn check_width(problem: &PdeProblem, layer: &[f64]) -> Result<()> {
    if layer.len() == problem.n_interior + 2 {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "layer has {} entries, expected {}",
            layer.len(),
            problem.n_interior + 2
        )))
    }
}

/// Marches all `m_steps` layers, checking `0 < phi <= phi+ + 1e-6` on each.
///
/// `phi+` is the largest terminal value on the grid, raised by any Dirichlet
/// boundary value met so far.
pub fn solve_pde(problem: &PdeProblem, scheme: Scheme) -> Result<PhiField> {
    problem.validate()?;
    let n = problem.n_interior;
    let grid: Vec<f64> = (0..n + 2).map(|i| problem.x(i)).collect();
    let mut field = PhiField::new(grid, problem.horizon);
    let mut layer = problem.initial_layer();
    let mut upper = (1..=n).map(|i| layer[i]).fold(f64::NEG_INFINITY, f64::max);
    upper = upper.max((problem.terminal)(problem.x_lo)).max((problem.terminal)(problem.x_hi));
    field.push_layer(0.0, &layer);

    for j in 0..problem.m_steps {
        let outcome = match scheme {
            Scheme::SemiImplicit => step_semi_implicit(problem, &layer, j),
            Scheme::FullyImplicit { tol, max_iters } => step_fully_implicit(problem, &layer, j, tol, max_iters),
        }
        .map_err(|e| e.at_layer(j + 1))?;
        layer = outcome.layer;

        let tau = problem.tau(j + 1);
        for bc in [&problem.left_bc, &problem.right_bc] {
            if let super::BoundaryCondition::Dirichlet(g) = bc {
                upper = upper.max(g(tau));
            }
        }
        if let Some(cell) = (1..=n).find(|&i| layer[i] > upper + BOUND_SLACK) {
            return Err(Error::BoundViolation {
                cell,
                value: layer[cell],
                bound: upper,
            }
            .at_layer(j + 1));
        }
        if outcome.clamped > 0 {
            field
                .warnings
                .push(format!("layer {}: {} face values clamped to {CLAMP_FLOOR:e}", j + 1, outcome.clamped));
        }
        field.clamped += outcome.clamped;
        field.iterations.push(outcome.iterations);
        field.push_layer(tau, &layer);
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::alpha::PiecewiseAlpha;
    use crate::linalg::SquareMatrix;
    use crate::pde::BoundaryCondition;
    use crate::qp::{ConstraintSet, MarketModel};

    fn linear_alpha() -> Arc<PiecewiseAlpha> {
        let m = MarketModel::new(vec![0.0, 0.0], SquareMatrix::identity(2).rows()).unwrap();
        Arc::new(PiecewiseAlpha::build(&m, 1e-3, 10.0, ConstraintSet::Simplex).unwrap())
    }

    fn constant_problem(value: f64, epsilon: f64, m_steps: usize) -> PdeProblem {
        PdeProblem {
            epsilon,
            r: 0.0,
            x_lo: -2.0,
            x_hi: 2.0,
            n_interior: 39,
            m_steps,
            horizon: 1.0,
            terminal: Arc::new(move |_| value),
            left_bc: BoundaryCondition::Neumann,
            right_bc: BoundaryCondition::Neumann,
            alpha: linear_alpha(),
        }
    }

    #[test]
    fn constant_is_steady_for_both_schemes() {
        let p = constant_problem(2.0, 0.0, 10);
        let layer = p.initial_layer();
        let semi = step_semi_implicit(&p, &layer, 0).unwrap();
        assert!(semi.layer.iter().all(|v| (v - 2.0).abs() < 1e-14));
        let full = step_fully_implicit(&p, &layer, 0, 1e-9, 100).unwrap();
        assert_eq!(full.iterations, 1);
        assert!(full.layer.iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn inflow_keeps_values_below_terminal() {
        // explicit flux: the step must resolve the inflow rate e^{-x_lo}
        let p = constant_problem(9.0, 1.0, 1000);
        let out = step_semi_implicit(&p, &p.initial_layer(), 0).unwrap();
        assert!(out.layer[1..=39].iter().all(|&v| v > 0.0 && v <= 9.0));
        let f = solve_pde(&p, Scheme::SemiImplicit).unwrap();
        assert!(f.min_interior() > 0.0 && f.max_interior() <= 9.0);
    }

    #[test]
    fn zero_steps_keeps_terminal_layer() {
        let p = constant_problem(3.0, 0.0, 0);
        let f = solve_pde(&p, Scheme::SemiImplicit).unwrap();
        assert_eq!(f.n_layers(), 1);
        assert!(f.interior(0).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn fully_implicit_is_deterministic() {
        let mut p = constant_problem(2.0, 0.0, 5);
        p.terminal = Arc::new(|x: f64| 1.0 + 0.5 * (-x * x).exp());
        let a = solve_pde(&p, Scheme::fully_implicit()).unwrap();
        let b = solve_pde(&p, Scheme::fully_implicit()).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn ghosts_follow_discrete_bc() {
        let mut p = constant_problem(2.0, 1.0, 50);
        p.left_bc = BoundaryCondition::Robin(1.0);
        p.right_bc = BoundaryCondition::Dirichlet(Arc::new(|tau| 2.0 - 0.1 * tau));
        let f = solve_pde(&p, Scheme::fully_implicit()).unwrap();
        let h = p.h();
        for j in 0..f.n_layers() {
            let l = f.layer(j);
            assert!((l[0] - l[1] / (1.0 + h)).abs() < 1e-15);
            assert_eq!(l[l.len() - 1], 2.0 - 0.1 * f.times[j]);
        }
    }

    #[test]
    fn tiny_iteration_budget_fails() {
        let mut p = constant_problem(2.0, 0.0, 2);
        p.terminal = Arc::new(|x: f64| 1.0 + (-x * x).exp());
        let err = solve_pde(&p, Scheme::FullyImplicit { tol: 1e-14, max_iters: 1 }).unwrap_err();
        assert!(matches!(err, Error::AtLayer { layer: 1, .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn invalid_problem_rejected() {
        let mut p = constant_problem(2.0, 0.0, 2);
        p.n_interior = 1;
        assert!(solve_pde(&p, Scheme::SemiImplicit).is_err());
        let mut p = constant_problem(-1.0, 0.0, 2);
        p.n_interior = 5;
        assert!(matches!(solve_pde(&p, Scheme::SemiImplicit), Err(Error::InvalidParams(_))));
    }
}
