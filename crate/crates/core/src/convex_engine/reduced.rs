//! Barrier over the precisions alone, for one-step and stationary programs.
//!
//! With γ_i = 1/r_i, r_i = 1/δ_i + b_iᵀ P b_i (b_i = C_iᵀ), S = P_f and, for the
//! stationary program, Q̂ = P⁻¹ where P is the stabilizing solution of
//! `P = A P_f Aᵀ + W`, `P_f = (P⁻¹ + D)⁻¹`, `D = Σ δ_i b_i b_iᵀ`, the
//! subproblem becomes
//!
//! ```text
//! minimize   F(δ) = Σ ℓ_i δ_i + Σ w_i ln r_i + const
//! subject to g(δ) = tr P_f ≤ β
//! ```
//!
//! For a single step P is the fixed prior. The barrier `t F − ln(β − g)` is
//! minimized by Newton with exact derivatives. First derivatives of P solve
//! Stein equations `P_j = A_cl P_j A_clᵀ − (A P_f b_j)(A P_f b_j)ᵀ` with
//! `A_cl = A K`, `K = I − P_f D`; the second-order terms are collected through
//! one adjoint Stein equation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::lmi::{center, roundoff_decrement, CenterOutcome};
use super::{feasibility, phase1, Route, SolveStatus, SolverOptions, SolverReport};
use crate::dc_program::{ConvexSubproblem, Horizon};
use crate::error::{invalid, Result};
use crate::kalman;
use crate::linalg;

/// Terms summed explicitly before the Stein tail is handed to doubling.
const KRYLOV_TERMS: usize = 32;

pub(crate) struct ReducedProblem<'a> {
    sub: &'a ConvexSubproblem,
    stationary: bool,
    lin: DVector<f64>,
    logw: DVector<f64>,
    beta: f64,
    c: DMatrix<f64>,
    a: DMatrix<f64>,
    w: DMatrix<f64>,
    /// One-step only: prior inverse and diag(C P Cᵀ).
    prior_info: Option<(DMatrix<f64>, DVector<f64>)>,
}

/// Quantities shared by the value and derivative computations.
pub(crate) struct Point {
    pub p: DMatrix<f64>,
    pub pf: DMatrix<f64>,
    pub r: DVector<f64>,
    pub f: f64,
    pub g: f64,
}

impl<'a> ReducedProblem<'a> {
    pub(crate) fn new(sub: &'a ConvexSubproblem) -> Result<Self> {
        let prog = &sub.program;
        let stationary = match prog.horizon() {
            Horizon::Infinite => true,
            Horizon::Finite(1) => false,
            Horizon::Finite(_) => return Err(invalid("the reduced route needs a one-step or stationary program")),
        };
        let ix = prog.index();
        let m = prog.sensors();
        let lin = DVector::from_fn(m, |i, _| sub.linear[ix.delta(0, i)]);
        let mut logw = DVector::zeros(m);
        for &(v, w) in &sub.neg_log {
            if let Some(i) = (0..m).find(|&i| ix.gamma(0, i) == v) {
                logw[i] += w;
            }
        }
        let prior_info = if stationary {
            None
        } else {
            let p = prog.prior();
            let c = prog.bank().c();
            let cp = c * p;
            let diag = DVector::from_fn(m, |i, _| cp.row(i).dot(&c.row(i)));
            Some((linalg::spd_inverse(p, "one-step prior")?, diag))
        };
        Ok(Self {
            sub,
            prior_info,
            stationary,
            lin,
            logw,
            beta: prog.beta(),
            c: prog.bank().c().clone(),
            a: prog.sys().a().clone(),
            w: prog.sys().noise_cov(),
        })
    }

    fn gain(&self, delta: &DVector<f64>) -> DMatrix<f64> {
        self.c.transpose() * DMatrix::from_diagonal(delta) * &self.c
    }

    /// None outside the domain (some δ ≤ 0, no stabilizing solution, or g ≥ β).
    pub(crate) fn point(&self, delta: &DVector<f64>) -> Option<Point> {
        if delta.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return None;
        }
        let (p, pf, cpc) = match &self.prior_info {
            Some((q, cpc)) => {
                let mut info = q + self.gain(delta);
                linalg::symmetrize_mut(&mut info);
                let pf = linalg::spd_inverse(&info, "one-step information").ok()?;
                (self.sub.program.prior().clone(), pf, cpc.clone())
            }
            None => {
                let p = kalman::stationary_prediction(&self.a, &self.w, &self.gain(delta)).ok()?;
                let v: Vec<f64> = delta.iter().map(|d| 1.0 / d).collect();
                let pf = kalman::measurement_update(&p, &self.c, &v).ok()?.0;
                let cp = &self.c * &p;
                let cpc = DVector::from_fn(delta.len(), |i, _| cp.row(i).dot(&self.c.row(i)));
                (p, pf, cpc)
            }
        };
        let g = pf.trace();
        if !(g < self.beta) {
            return None;
        }
        let r = DVector::from_fn(delta.len(), |i, _| 1.0 / delta[i] + cpc[i]);
        let f = self.lin.dot(delta) + self.logw.iter().zip(r.iter()).map(|(w, r)| w * r.ln()).sum::<f64>() + self.sub.constant;
        f.is_finite().then_some(Point { p, pf, r, f, g })
    }

    pub(crate) fn barrier(&self, delta: &DVector<f64>, t: f64) -> Option<f64> {
        let pt = self.point(delta)?;
        Some(t * pt.f - (self.beta - pt.g).ln())
    }

    /// Gradient and Hessian of `t F − ln(β − g)`.
    pub(crate) fn derivatives(&self, delta: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let pt = self.point(delta)?;
        if !self.stationary {
            return Some(self.one_step_derivatives(delta, &pt, t));
        }
        let (n, m) = (self.c.ncols(), self.c.nrows());
        let eye = DMatrix::<f64>::identity(n, n);
        let d = self.gain(delta);
        let k = &eye - &pt.pf * &d;
        let acl = &self.a * &k;
        let u = &pt.pf * self.c.transpose(); // column j = P_f b_j
        let denom = self.beta - pt.g;

        // P_j, then P_f,j and the derivative tables.
        let p_j: Vec<DMatrix<f64>> = if self.stationary {
            let au = &self.a * &u;
            let mut tail_map = None;
            (0..m).map(|j| stein_rank1(&acl, &au.column(j).into_owned(), &mut tail_map)).collect::<Option<_>>()?
        } else {
            vec![DMatrix::zeros(n, n); m]
        };
        let pf_j: Vec<DMatrix<f64>> =
            (0..m).map(|j| &k * &p_j[j] * k.transpose() - u.column(j) * u.column(j).transpose()).collect();
        // dr[(i, j)] = ∂r_i/∂δ_j
        let mut dr = DMatrix::zeros(m, m);
        for j in 0..m {
            let cpj = &self.c * &p_j[j];
            for i in 0..m {
                dr[(i, j)] = cpj.row(i).dot(&self.c.row(i));
            }
            dr[(j, j)] -= 1.0 / (delta[j] * delta[j]);
        }
        let gj = DVector::from_fn(m, |j, _| pf_j[j].trace());
        let wr = DVector::from_fn(m, |i, _| self.logw[i] / pt.r[i]);
        let f_grad = &self.lin + dr.transpose() * &wr;
        let grad = &f_grad * t + &gj / denom;

        // Second-order terms through Z' (see module docs).
        let z = if self.stationary {
            let mut g_tot = self.c.transpose() * DMatrix::from_diagonal(&(&wr * t)) * &self.c + k.transpose() * &k / denom;
            linalg::symmetrize_mut(&mut g_tot);
            let y = kalman::discrete_lyapunov(&acl.transpose(), &g_tot).ok()?;
            self.a.transpose() * y * &self.a + &eye / denom
        } else {
            &eye / denom
        };
        let mut h = DMatrix::zeros(m, m);
        for kk in 0..m {
            let pf_k = &pf_j[kk];
            let q = &z * pf_k * self.c.transpose();
            // −2 b_jᵀ P_f Z' P_f,k b_j = −2 u_j · (Z' P_f,k b_j)
            for j in 0..m {
                h[(j, kk)] -= 2.0 * u.column(j).dot(&q.column(j));
            }
            if self.stationary {
                let k_k = -(pf_k * &d) - u.column(kk) * self.c.row(kk);
                let mk = k.transpose() * &z * k_k;
                for j in 0..m {
                    h[(j, kk)] += 2.0 * mk.component_mul(&p_j[j]).sum();
                }
            }
        }
        let wr2 = DVector::from_fn(m, |i, _| self.logw[i] / (pt.r[i] * pt.r[i]));
        h -= dr.transpose() * DMatrix::from_diagonal(&wr2) * &dr * t;
        for j in 0..m {
            h[(j, j)] += t * 2.0 * self.logw[j] / (pt.r[j] * delta[j].powi(3));
        }
        h += &gj * gj.transpose() / (denom * denom);
        linalg::symmetrize_mut(&mut h);
        Some((grad, h))
    }

    /// Fixed prior: P_j = 0 and P_f,j = −u_j u_jᵀ with u_j = P_f b_j, so every
    /// table reduces to Gram matrices of the columns of U.
    fn one_step_derivatives(&self, delta: &DVector<f64>, pt: &Point, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let m = delta.len();
        let denom = self.beta - pt.g;
        let u = &pt.pf * self.c.transpose();
        let g1 = &self.c * &u; // b_jᵀ P_f b_k
        let g2 = u.transpose() * &u; // u_jᵀ u_k
        let grad = DVector::from_fn(m, |j, _| {
            let dr = -1.0 / (delta[j] * delta[j]);
            t * (self.lin[j] + self.logw[j] / pt.r[j] * dr) - g2[(j, j)] / denom
        });
        let mut h = DMatrix::from_fn(m, m, |j, k| {
            2.0 / denom * g2[(j, k)] * g1[(k, j)] + g2[(j, j)] * g2[(k, k)] / (denom * denom)
        });
        for j in 0..m {
            let (r, d) = (pt.r[j], delta[j]);
            h[(j, j)] += t * self.logw[j] * (2.0 / (r * d.powi(3)) - 1.0 / (r * r * d.powi(4)));
        }
        linalg::symmetrize_mut(&mut h);
        (grad, h)
    }

    /// Full program vector for a precision vector: every other variable on its bound.
    pub(crate) fn embed(&self, delta: &DVector<f64>) -> Result<DVector<f64>> {
        let prog = &self.sub.program;
        let pt = self.point(delta).ok_or_else(|| invalid("precisions outside the reduced domain"))?;
        let ix = prog.index();
        let n = prog.sys().n();
        let mut x = DVector::zeros(prog.n_vars());
        for i in 0..prog.sensors() {
            x[ix.delta(0, i)] = delta[i];
            x[ix.gamma(0, i)] = 1.0 / pt.r[i];
        }
        for a in 0..n {
            for b in a..n {
                x[ix.s(0, a, b)] = pt.pf[(a, b)];
            }
        }
        if ix.q_pred(0, 0, 0).is_some() {
            let q = linalg::spd_inverse(&pt.p, "stationary prediction covariance")?;
            for a in 0..n {
                for b in a..n {
                    x[ix.q_pred(0, a, b).unwrap()] = q[(a, b)];
                }
            }
        }
        Ok(x)
    }
}

/// `X = A X Aᵀ − v vᵀ`: explicit sum of the first terms, doubling for the rest.
fn stein_rank1(a: &DMatrix<f64>, v: &DVector<f64>, a_pow: &mut Option<DMatrix<f64>>) -> Option<DMatrix<f64>> {
    let n = v.len();
    let mut x = DMatrix::zeros(n, n);
    let mut w = v.clone();
    let first = v.norm_squared();
    for _ in 0..KRYLOV_TERMS {
        x -= &w * w.transpose();
        w = a * w;
        if w.norm_squared() <= 1e-32 * first {
            return Some(x);
        }
    }
    let ap = a_pow.get_or_insert_with(|| {
        let mut p = DMatrix::identity(n, n);
        for _ in 0..KRYLOV_TERMS {
            p = a * p;
        }
        p
    });
    kalman::discrete_lyapunov(ap, &x).ok()
}

pub fn solve(sub: &ConvexSubproblem, warm_start: Option<&DVector<f64>>, opts: &SolverOptions) -> Result<SolverReport> {
    let start = Instant::now();
    let rp = ReducedProblem::new(sub)?;
    let prog = &sub.program;
    let m = prog.sensors();
    let mut message = String::new();
    let warm = warm_start.map(|x| DVector::from_fn(m, |i, _| x[prog.index().delta(0, i)]));
    let mut delta = match warm {
        Some(d) if rp.point(&d).is_some() => d,
        other => {
            if other.is_some() {
                message.push_str("warm start outside the domain; used phase I. ");
            }
            DVector::from_element(m, phase1::uniform_level(prog)?)
        }
    };
    let mut t = opts.t0;
    let mut iterations = 0;
    let mut status = SolveStatus::Optimal;
    loop {
        let outcome = center(
            &mut delta,
            opts.max_newton,
            roundoff_decrement(t),
            |d| rp.barrier(d, t),
            |d| rp.derivatives(d, t),
            |d, dd, s| d + dd * s,
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
        if 1.0 / t <= opts.opt_tol {
            break;
        }
        t *= opts.mu;
    }
    let x = rp.embed(&delta)?;
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
        gap_bound: 1.0 / t,
        route: Route::Reduced,
        message,
    })
}
