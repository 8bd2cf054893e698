//! Dense primal barrier over all program variables.
//!
//! Minimizes `t·f(x) − Σ_b log det Z_b(x)` by damped Newton for an increasing
//! sequence of t. With `W = Z⁻¹` and `G_i = W M_i`, the barrier gradient is
//! `−tr G_i` and its Hessian `tr(G_i G_j)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{feasibility, phase1, Route, SolveStatus, SolverOptions, SolverReport};
use crate::dc_program::{ConvexSubproblem, LmiBlock};
use crate::error::Result;
use crate::linalg;

const ARMIJO: f64 = 0.25;
/// Centering tolerance on λ²/2; costs at most INNER_TOL/t in the objective.
const INNER_TOL: f64 = 1e-8;
/// Decrement below which a roundoff-limited stage counts as centered.
const ROUNDOFF_DECREMENT: f64 = 1e-6;

/// A stalled stage at barrier weight t is accepted while λ²/2 ≤ this · t,
/// i.e. while the centering error costs at most this much objective.
const ROUNDOFF_OBJECTIVE: f64 = 1e-12;

pub(crate) fn roundoff_decrement(t: f64) -> f64 {
    ROUNDOFF_DECREMENT.max(ROUNDOFF_OBJECTIVE * t)
}

struct Barrier<'a> {
    sub: &'a ConvexSubproblem,
    degree: f64,
}

impl<'a> Barrier<'a> {
    fn new(sub: &'a ConvexSubproblem) -> Self {
        Self { sub, degree: sub.blocks().iter().map(|b| b.dim as f64).sum() }
    }

    /// Barrier value, or None outside the interior.
    fn value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let f = self.sub.objective(x);
        if !f.is_finite() {
            return None;
        }
        let mut phi = t * f;
        for b in self.sub.blocks() {
            phi -= linalg::logdet_spd(&b.evaluate(x))?;
        }
        Some(phi)
    }

    fn gradient_hessian(&self, x: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nv = self.sub.n_vars();
        let mut g = &self.sub.linear * t;
        let mut h = DMatrix::zeros(nv, nv);
        for &(v, w) in &self.sub.neg_log {
            g[v] -= t * w / x[v];
            h[(v, v)] += t * w / (x[v] * x[v]);
        }
        for b in self.sub.blocks() {
            accumulate_block(b, x, &mut g, &mut h)?;
        }
        Some((g, h))
    }
}

fn accumulate_block(b: &LmiBlock, x: &DVector<f64>, g: &mut DVector<f64>, h: &mut DMatrix<f64>) -> Option<()> {
    let d = b.dim;
    let w = b.evaluate(x).cholesky()?.inverse();
    let k = b.terms.len();
    let mut ga = DMatrix::zeros(k, d * d);
    let mut gb = DMatrix::zeros(k, d * d);
    for (row, (v, entries)) in b.terms.iter().enumerate() {
        let mut gi = DMatrix::<f64>::zeros(d, d);
        for &(r, c, val) in entries {
            // (W M)[:, c] += W[:, r]·val and, off the diagonal, (W M)[:, r] += W[:, c]·val
            for p in 0..d {
                gi[(p, c)] += w[(p, r)] * val;
                if r != c {
                    gi[(p, r)] += w[(p, c)] * val;
                }
            }
        }
        g[*v] -= gi.trace();
        for q in 0..d {
            for p in 0..d {
                ga[(row, q * d + p)] = gi[(p, q)];
                gb[(row, p * d + q)] = gi[(p, q)];
            }
        }
    }
    let hb = &ga * gb.transpose();
    for (i, (vi, _)) in b.terms.iter().enumerate() {
        for (j, (vj, _)) in b.terms.iter().enumerate() {
            h[(*vi, *vj)] += hb[(i, j)];
        }
    }
    Some(())
}

/// Newton direction, regularizing the Hessian if it is numerically singular.
pub(crate) fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let mut hs = linalg::symmetrize(h);
    let scale = hs.diagonal().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut reg = 0.0;
    for _ in 0..8 {
        if let Some(ch) = hs.clone().cholesky() {
            let dx = ch.solve(&(-g));
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        let next = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        for i in 0..hs.nrows() {
            hs[(i, i)] += next - reg;
        }
        reg = next;
    }
    None
}

pub(crate) enum CenterOutcome {
    Converged(usize),
    MaxIter(usize),
    Stalled { steps: usize, decrement: f64 },
}

/// Damped Newton on a barrier function, shared by both routes.
pub(crate) fn center<X, V, GH>(
    x: &mut X,
    max_newton: usize,
    roundoff: f64,
    value: V,
    grad_hess: GH,
    step: impl Fn(&X, &DVector<f64>, f64) -> X,
) -> CenterOutcome
where
    V: Fn(&X) -> Option<f64>,
    GH: Fn(&X) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let Some(mut phi) = value(x) else { return CenterOutcome::Stalled { steps: 0, decrement: f64::INFINITY } };
    for it in 0..max_newton {
        let Some((g, h)) = grad_hess(x) else { return CenterOutcome::Stalled { steps: it, decrement: f64::INFINITY } };
        let Some(dx) = newton_direction(&h, &g) else { return CenterOutcome::Stalled { steps: it, decrement: f64::INFINITY } };
        let slope = g.dot(&dx);
        let decrement = -slope / 2.0;
        if decrement <= INNER_TOL {
            return CenterOutcome::Converged(it);
        }
        let mut s = 1.0;
        loop {
            let trial = step(x, &dx, s);
            if let Some(v) = value(&trial) {
                if v <= phi + ARMIJO * s * slope {
                    if v >= phi {
                        return if decrement < roundoff {
                            CenterOutcome::Converged(it)
                        } else {
                            CenterOutcome::Stalled { steps: it, decrement }
                        };
                    }
                    *x = trial;
                    phi = v;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-14 {
                // Roundoff floor: the barrier cannot resolve further decrease.
                return if decrement < roundoff {
                    CenterOutcome::Converged(it)
                } else {
                    CenterOutcome::Stalled { steps: it, decrement }
                };
            }
        }
    }
    CenterOutcome::MaxIter(max_newton)
}

pub fn solve(sub: &ConvexSubproblem, warm_start: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<SolverReport> {
    let start = Instant::now();
    let barrier = Barrier::new(sub);
    let mut message = String::new();
    let mut x = match warm_start {
        Some(x) if barrier.value(x, 1.0).is_some() => x.clone(),
        Some(_) => {
            message.push_str("warm start not strictly feasible; used phase I. ");
            phase1::phase1_feasible(&sub.program)?
        }
        None => phase1::phase1_feasible(&sub.program)?,
    };
    let mut t = opts.t0;
    let mut iterations = 0;
    let mut status = SolveStatus::Optimal;
    loop {
        let outcome = center(
            &mut x,
            opts.max_newton,
            roundoff_decrement(t),
            |x| barrier.value(x, t),
            |x| barrier.gradient_hessian(x, t),
            |x, dx, s| x + dx * s,
        );
        match outcome {
            CenterOutcome::Converged(k) => iterations += k,
            CenterOutcome::MaxIter(k) => {
                iterations += k;
                status = SolveStatus::MaxIter;
                message.push_str(&format!("Newton limit at t={t:e}"));
                break;
            }
            CenterOutcome::Stalled { steps, decrement } => {
                iterations += steps;
                status = SolveStatus::NumericalFailure;
                message.push_str(&format!("Newton stalled at t={t:e} with decrement {decrement:e}"));
                break;
            }
        }
        if barrier.degree / t <= opts.opt_tol {
            break;
        }
        t *= opts.mu;
    }
    let (max_violation, min_lmi_eig) = feasibility(sub, &x);
    if status == SolveStatus::Optimal && max_violation > opts.feas_tol {
        status = SolveStatus::NumericalFailure;
        message.push_str(&format!("final violation {max_violation:e}"));
    }
    Ok(SolverReport {
        status,
        objective: sub.objective(&x),
        x,
        max_violation,
        min_lmi_eig,
        iterations,
        wall_time: start.elapsed(),
        gap_bound: barrier.degree / t,
        route: Route::Dense,
        message,
    })
}
