//! Strictly feasible starting points.
//!
//! The Gaussian-model MSE only decreases when any precision grows, so a
//! uniform allocation δ = ε·1 on an ascending grid finds a feasible point
//! whenever one exists with precisions up to the top of the grid. Below that
//! the budget is reported as infeasible together with the smallest MSE seen.

use nalgebra::{DMatrix, DVector};

use crate::dc_program::DCProgram;
use crate::error::{Error, Result};
use crate::linalg;

pub const GRID_LO: f64 = 1e-3;
pub const GRID_HI: f64 = 1e8;
pub const GRID_PER_DECADE: usize = 10;

fn grid() -> impl Iterator<Item = f64> {
    let decades = (GRID_HI / GRID_LO).log10().round() as usize;
    (0..=decades * GRID_PER_DECADE).map(|k| GRID_LO * 10f64.powf(k as f64 / GRID_PER_DECADE as f64))
}

/// Inflation added to predicted covariances so the propagation blocks are strict.
fn q_inflation(program: &DCProgram) -> f64 {
    let w = program.sys().noise_cov();
    1e-6 * (w.trace() / w.nrows() as f64).max(1e-12)
}

/// Smallest uniform precision level on the grid whose MSE is strictly below β.
pub fn uniform_level(program: &DCProgram) -> Result<f64> {
    let mut best = f64::INFINITY;
    for eps in grid() {
        let mse = program.mse(&DMatrix::from_element(program.steps(), program.sensors(), eps));
        best = best.min(mse);
        if mse < program.beta() * (1.0 - 1e-9) {
            return Ok(eps);
        }
    }
    Err(Error::InfeasibleBudget { beta: program.beta(), min_achievable: best })
}

/// A point strictly inside every LMI of the program.
pub fn phase1_feasible(program: &DCProgram) -> Result<DVector<f64>> {
    let eta = q_inflation(program);
    let n = program.sys().n() as f64;
    let mut best = f64::INFINITY;
    for eps in grid() {
        let delta = DMatrix::from_element(program.steps(), program.sensors(), eps);
        let Ok(cov) = program.covariances(&delta, eta) else { continue };
        let mse = cov.mean_trace();
        best = best.min(mse);
        let slack = program.beta() - mse;
        if !(slack > 1e-9 * program.beta()) {
            continue;
        }
        let Ok(x) = program.point_from_delta(&delta, 0.5, slack / (2.0 * n), eta) else { continue };
        if program.blocks().iter().all(|b| linalg::cholesky(&b.evaluate(&x), "phase I block").is_ok()) {
            return Ok(x);
        }
    }
    Err(Error::InfeasibleBudget { beta: program.beta(), min_achievable: best })
}
