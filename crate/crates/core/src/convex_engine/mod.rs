//! Barrier-method solver for the convex CCP subproblems.
//!
//! Two routes reach the same optimum:
//!
//! * [`lmi`]: a dense primal barrier over every variable of the program,
//!   minimizing `t·f(x) − Σ log det Z_b(x)`. Works for any horizon.
//! * [`reduced`]: for one-step and stationary programs, γ, S and the
//!   information matrices can be minimized out in closed form (γ and S sit on
//!   their bounds, Q is the stabilizing Riccati solution). What remains is a
//!   barrier over the precisions alone with a single scalar budget constraint,
//!   which scales to the 60-node heat problem.
//!
//! [`solve`] picks the route; both can be called directly.

pub mod lmi;
pub mod phase1;
pub mod reduced;

use std::time::Duration;

use nalgebra::DVector;

use crate::dc_program::{ConvexSubproblem, Horizon};
use crate::error::Result;

pub use phase1::phase1_feasible;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    /// Reduced when the program allows it, dense otherwise.
    #[default]
    Auto,
    Dense,
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_newton: usize,
    pub t0: f64,
    pub mu: f64,
    pub route: Route,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-9, opt_tol: 1e-7, max_newton: 200, t0: 1.0, mu: 10.0, route: Route::Auto }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub status: SolveStatus,
    /// Subproblem objective at `x`, nats.
    pub objective: f64,
    pub x: DVector<f64>,
    pub max_violation: f64,
    pub min_lmi_eig: f64,
    /// Total Newton steps over all barrier stages.
    pub iterations: usize,
    pub wall_time: Duration,
    /// Barrier degree over final t: bound on the optimality gap.
    pub gap_bound: f64,
    pub route: Route,
    pub message: String,
}

impl SolverReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// True when the reduced route is exact for this program.
pub fn reduced_applies(sub: &ConvexSubproblem) -> bool {
    matches!(sub.program.horizon(), Horizon::Infinite | Horizon::Finite(1))
}

/// Solves a subproblem from `warm_start` (strictly feasible) or from a Phase I point.
pub fn solve(sub: &ConvexSubproblem, warm_start: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<SolverReport> {
    let route = match opts.route {
        Route::Auto if reduced_applies(sub) => Route::Reduced,
        Route::Auto => Route::Dense,
        r => r,
    };
    match route {
        Route::Reduced => reduced::solve(sub, warm_start, opts),
        _ => lmi::solve(sub, warm_start, opts),
    }
}

/// Scaled violation and smallest eigenvalue over all blocks.
pub(crate) fn feasibility(sub: &ConvexSubproblem, x: &DVector<f64>) -> (f64, f64) {
    let checks = sub.program.block_eigenvalues(x);
    let viol = checks.iter().map(|c| (-c.min_eig / c.scale).max(0.0)).fold(0.0, f64::max);
    let min_eig = checks.iter().map(|c| c.min_eig).fold(f64::INFINITY, f64::min);
    (viol, min_eig)
}
