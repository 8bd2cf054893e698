//! Riccati recursions and the LMMSE (Kalman) filter.
//!
//! Zero-rate sensors never appear here: callers pass only the active rows of C
//! and their (finite, positive) noise variances.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::GaussMarkovSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiState {
    pub p_pred: DMatrix<f64>,
    pub p_filt: DMatrix<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_filt: DVector<f64>,
    pub x_pred: DVector<f64>,
    pub riccati: RiccatiState,
}

impl FilterState {
    /// Filter before the first measurement: prediction `x0` with covariance `p0`.
    pub fn new(x0: DVector<f64>, p0: DMatrix<f64>) -> Self {
        Self {
            x_filt: x0.clone(),
            x_pred: x0,
            riccati: RiccatiState { p_filt: p0.clone(), p_pred: p0, t: 1 },
        }
    }
}

/// Measurement update with the active sensors.
///
/// Returns `(P_filt, L)` where `L = P C^T (C P C^T + V)^{-1}`. The covariance is
/// formed in Joseph form, which stays PSD even when `P_pred` is singular.
pub fn measurement_update(
    p_pred: &DMatrix<f64>,
    c_active: &DMatrix<f64>,
    v_active: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = p_pred.nrows();
    let k = c_active.nrows();
    if v_active.len() != k || (k > 0 && c_active.ncols() != n) {
        return Err(invalid("measurement_update: dimension mismatch"));
    }
    if k == 0 {
        return Ok((p_pred.clone(), DMatrix::zeros(n, 0)));
    }
    if let Some(v) = v_active.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(invalid(format!("active sensor noise variance must be positive and finite, got {v}")));
    }
    let pct = p_pred * c_active.transpose();
    let mut innov = c_active * &pct;
    for (i, v) in v_active.iter().enumerate() {
        innov[(i, i)] += v;
    }
    linalg::symmetrize_mut(&mut innov);
    let chol = linalg::cholesky(&innov, "innovation covariance")?;
    // L = P C^T S^{-1}  <=>  S L^T = C P
    let gain = chol.solve(&pct.transpose()).transpose();
    let i_lc = DMatrix::identity(n, n) - &gain * c_active;
    let v = DMatrix::from_diagonal(&DVector::from_column_slice(v_active));
    let mut p_filt = &i_lc * p_pred * i_lc.transpose() + &gain * v * gain.transpose();
    linalg::symmetrize_mut(&mut p_filt);
    Ok((p_filt, gain))
}

/// `A P_filt A^T + F F^T`, re-symmetrized.
pub fn time_update(p_filt: &DMatrix<f64>, sys: &GaussMarkovSystem) -> DMatrix<f64> {
    let mut p = sys.a() * p_filt * sys.a().transpose() + sys.noise_cov();
    linalg::symmetrize_mut(&mut p);
    p
}

/// One filter step: fold in the reconstructed measurements `eta` of the active
/// sensors, then predict the next state.
pub fn lmmse_step(
    state: &FilterState,
    sys: &GaussMarkovSystem,
    c_active: &DMatrix<f64>,
    v_active: &[f64],
    eta: &[f64],
) -> Result<FilterState> {
    if eta.len() != c_active.nrows() {
        return Err(invalid("lmmse_step: one reconstruction per active sensor expected"));
    }
    let (p_filt, gain) = measurement_update(&state.riccati.p_pred, c_active, v_active)?;
    let x_filt = if eta.is_empty() {
        state.x_pred.clone()
    } else {
        let innovation = DVector::from_column_slice(eta) - c_active * &state.x_pred;
        &state.x_pred + &gain * innovation
    };
    let x_pred = sys.a() * &x_filt;
    let p_pred = time_update(&p_filt, sys);
    Ok(FilterState {
        x_filt,
        x_pred,
        riccati: RiccatiState { p_pred, p_filt, t: state.riccati.t + 1 },
    })
}

pub const STEADY_STATE_TOL: f64 = 1e-12;
pub const STEADY_STATE_MAX_ITER: usize = 1_000_000;

/// Fixed point of (measurement update then time update) with a fixed active set.
///
/// Iterates from `F F^T` until the relative change of `P_pred` drops below 1e-12.
pub fn steady_state_riccati(
    sys: &GaussMarkovSystem,
    c_active: &DMatrix<f64>,
    v_active: &[f64],
) -> Result<RiccatiState> {
    let mut p_pred = sys.noise_cov();
    for it in 0..STEADY_STATE_MAX_ITER {
        let (p_filt, _) = measurement_update(&p_pred, c_active, v_active)?;
        let next = time_update(&p_filt, sys);
        let change = (&next - &p_pred).norm();
        let scale = next.norm().max(f64::MIN_POSITIVE);
        if !change.is_finite() || !scale.is_finite() {
            break;
        }
        p_pred = next;
        if change <= STEADY_STATE_TOL * scale {
            let (p_filt, _) = measurement_update(&p_pred, c_active, v_active)?;
            return Ok(RiccatiState { p_pred, p_filt, t: it + 1 });
        }
    }
    Err(Error::Convergence { what: "steady-state Riccati iteration".into(), iterations: STEADY_STATE_MAX_ITER })
}

/// Stationary prediction covariance for information rate `d` (= Cᵀ V⁻¹ C):
/// the stabilizing solution of `P = A (P⁻¹ + D)⁻¹ Aᵀ + W`.
///
/// Solved with the structure-preserving doubling algorithm, which converges
/// quadratically and never needs `P⁻¹`. Used by the optimizer, where the
/// fixed-point iteration of [`steady_state_riccati`] is too slow.
pub fn stationary_prediction(a: &DMatrix<f64>, w: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.transpose();
    let mut gk = d.clone();
    let mut hk = w.clone();
    const MAX_DOUBLINGS: usize = 80;
    for _ in 0..MAX_DOUBLINGS {
        let lu = (&eye + &gk * &hk).lu();
        let inv_a = lu.solve(&ak).ok_or_else(|| Error::NumericalFailure {
            what: "doubling step (I + G H)".into(),
            condition: f64::INFINITY,
        })?;
        let inv_g = lu.solve(&gk).expect("same factorization");
        let a_next = &ak * &inv_a;
        let mut g_next = &gk + &ak * inv_g * ak.transpose();
        let mut h_next = &hk + ak.transpose() * &hk * &inv_a;
        linalg::symmetrize_mut(&mut g_next);
        linalg::symmetrize_mut(&mut h_next);
        let change = (&h_next - &hk).norm();
        let scale = h_next.norm();
        if !scale.is_finite() {
            break;
        }
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if change <= 1e-15 * scale.max(f64::MIN_POSITIVE) || ak.norm() <= 1e-300 {
            return Ok(hk);
        }
    }
    Err(Error::Convergence { what: "stationary Riccati doubling".into(), iterations: MAX_DOUBLINGS })
}

/// Solution of the Stein equation `X = A X Aᵀ + Q` for a Schur-stable `A`,
/// by squaring: X_{k+1} = X_k + A_k X_k A_kᵀ, A_{k+1} = A_k².
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    let mut ak = a.clone();
    const MAX_SQUARINGS: usize = 64;
    for _ in 0..MAX_SQUARINGS {
        let step = &ak * &x * ak.transpose();
        let change = step.norm();
        x += step;
        if !x.norm().is_finite() {
            break;
        }
        if change <= 1e-16 * x.norm().max(f64::MIN_POSITIVE) {
            linalg::symmetrize_mut(&mut x);
            return Ok(x);
        }
        ak = &ak * &ak;
    }
    Err(Error::NumericalFailure { what: "Stein equation (A not Schur-stable)".into(), condition: f64::INFINITY })
}
