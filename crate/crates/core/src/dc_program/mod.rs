//! The rate-allocation problem in difference-of-convex form.
//!
//! Decision variables per step t and sensor i: precision δ = 1/V, slack γ,
//! MSE bound S_t and predicted information matrix Q_{t|t-1}. The filtered
//! information Q_{t|t} = Q_{t|t-1} + Σ δ C_iᵀC_i is substituted wherever it
//! appears, so it is never a variable. Constraints:
//!
//! * sensor block  `[[δ−γ, δC_i], [C_iᵀδ, Q_{t|t-1} + δC_iᵀC_i]] ⪰ 0`
//! * MSE block     `[[S_t, I], [I, Q_{t|t}]] ⪰ 0`
//! * budget        `β − (1/T) Σ tr S_t ≥ 0`
//! * propagation   `[[Q_{t|t-1}, Q_{t|t-1}A, Q_{t|t-1}F], [·, Q_{t-1|t-1}, 0], [·, 0, I]] ⪰ 0`
//!
//! The objective `Σ (α_i/2)(log δ − log γ)` (averaged over T for finite
//! horizons) is in nats; it equals ln 2 times the weighted rate in bits when γ
//! sits on its bound.
//!
//! For finite horizons the prior `P_init` is the covariance before the first
//! measurement, so `Q_{1|0} = P_init⁻¹` is fixed and step 1 sensors still
//! carry information. The infinite-horizon program has a single copy of every
//! variable and the propagation block couples Q̂ = Q_{t|t-1} with Q = Q_{t|t}.

mod blocks;
pub mod dump;

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use blocks::{Entries, LmiBlock};
use blocks::BlockBuilder;

use crate::error::{invalid, Error, Result};
use crate::info_cost::csv_err;
use crate::kalman;
use crate::linalg;
use crate::model::{GaussMarkovSystem, SensorBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    /// Number of time-indexed copies of the per-step variables.
    pub fn steps(&self) -> usize {
        match self {
            Horizon::Finite(t) => *t,
            Horizon::Infinite => 1,
        }
    }
}

/// Position of every decision variable in the flat vector x.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarIndex {
    n: usize,
    sensors: usize,
    steps: usize,
    infinite: bool,
    svec: usize,
    gamma0: usize,
    s0: usize,
    q0: usize,
    total: usize,
}

impl VarIndex {
    fn new(n: usize, sensors: usize, horizon: Horizon) -> Self {
        let steps = horizon.steps();
        let svec = n * (n + 1) / 2;
        let gamma0 = steps * sensors;
        let s0 = gamma0 + steps * sensors;
        let q0 = s0 + steps * svec;
        let q_copies = match horizon {
            Horizon::Finite(t) => t - 1,
            Horizon::Infinite => 1,
        };
        Self { n, sensors, steps, infinite: horizon == Horizon::Infinite, svec, gamma0, s0, q0, total: q0 + q_copies * svec }
    }

    pub fn len(&self) -> usize {
        self.total
    }
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
    pub fn delta(&self, t: usize, i: usize) -> usize {
        t * self.sensors + i
    }
    pub fn gamma(&self, t: usize, i: usize) -> usize {
        self.gamma0 + t * self.sensors + i
    }
    /// Index of entry (a, b) of S_t.
    pub fn s(&self, t: usize, a: usize, b: usize) -> usize {
        self.s0 + t * self.svec + self.packed(a, b)
    }
    /// Index of entry (a, b) of Q_{t|t-1}, if that matrix is a variable.
    pub fn q_pred(&self, t: usize, a: usize, b: usize) -> Option<usize> {
        let copy = if self.infinite {
            0
        } else if t == 0 {
            return None;
        } else {
            t - 1
        };
        Some(self.q0 + copy * self.svec + self.packed(a, b))
    }
    /// Offset of (a, b) in the packed upper triangle; row a starts at Σ_{r<a} (n − r).
    fn packed(&self, a: usize, b: usize) -> usize {
        let (a, b) = (a.min(b), a.max(b));
        a * self.n - a * a.saturating_sub(1) / 2 + (b - a)
    }
    /// Human-readable name of variable `v` (1-based step and sensor indices).
    pub fn name(&self, v: usize) -> String {
        if v < self.gamma0 {
            return format!("delta[{},{}]", v / self.sensors + 1, v % self.sensors + 1);
        }
        if v < self.s0 {
            let r = v - self.gamma0;
            return format!("gamma[{},{}]", r / self.sensors + 1, r % self.sensors + 1);
        }
        let (label, base, step_offset) = if v < self.q0 { ("S", self.s0, 1) } else { ("Qpred", self.q0, if self.infinite { 1 } else { 2 }) };
        let r = v - base;
        let (copy, within) = (r / self.svec, r % self.svec);
        let (a, b) = self.unpack(within);
        format!("{label}[{}][{},{}]", copy + step_offset, a + 1, b + 1)
    }
    fn unpack(&self, mut k: usize) -> (usize, usize) {
        let mut a = 0;
        while k >= self.n - a {
            k -= self.n - a;
            a += 1;
        }
        (a, a + k)
    }
}

#[derive(Debug)]
struct ProgramData {
    horizon: Horizon,
    sys: GaussMarkovSystem,
    bank: SensorBank,
    beta: f64,
    prior: DMatrix<f64>,
    prior_inv: Option<DMatrix<f64>>,
    index: VarIndex,
    blocks: Vec<LmiBlock>,
}

/// An assembled allocation problem. Cheap to clone.
#[derive(Debug, Clone)]
pub struct DCProgram {
    data: Arc<ProgramData>,
}

/// Gaussian-model covariances implied by a precision table.
#[derive(Debug, Clone)]
pub struct Covariances {
    pub p_pred: Vec<DMatrix<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
}

impl Covariances {
    pub fn mean_trace(&self) -> f64 {
        self.p_filt.iter().map(|p| p.trace()).sum::<f64>() / self.p_filt.len() as f64
    }
}

impl DCProgram {
    /// Finite-horizon program with the system's `P_init` as prior.
    pub fn assemble_finite(sys: &GaussMarkovSystem, bank: &SensorBank, steps: usize, beta: f64) -> Result<Self> {
        Self::assemble_finite_with_prior(sys, bank, steps, beta, sys.p_init())
    }

    /// Finite-horizon program whose first measurement is taken against `prior`.
    pub fn assemble_finite_with_prior(
        sys: &GaussMarkovSystem,
        bank: &SensorBank,
        steps: usize,
        beta: f64,
        prior: &DMatrix<f64>,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("horizon must be at least one step"));
        }
        Self::assemble(sys, bank, Horizon::Finite(steps), beta, prior.clone())
    }

    pub fn assemble_infinite(sys: &GaussMarkovSystem, bank: &SensorBank, beta: f64) -> Result<Self> {
        Self::assemble(sys, bank, Horizon::Infinite, beta, sys.p_init().clone())
    }

    fn assemble(sys: &GaussMarkovSystem, bank: &SensorBank, horizon: Horizon, beta: f64, prior: DMatrix<f64>) -> Result<Self> {
        bank.check_dims(sys)?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(invalid(format!("MSE budget must be finite and non-negative, got {beta}")));
        }
        let n = sys.n();
        if prior.shape() != (n, n) {
            return Err(invalid("prior covariance must be n x n"));
        }
        let prior = linalg::symmetrize(&prior);
        let prior_inv = match horizon {
            Horizon::Finite(_) => Some(linalg::spd_inverse(&prior, "prior covariance").map_err(|_| {
                invalid("finite-horizon prior covariance must be positive definite")
            })?),
            Horizon::Infinite => None,
        };
        let index = VarIndex::new(n, bank.len(), horizon);
        let mut data = ProgramData { horizon, sys: sys.clone(), bank: bank.clone(), beta, prior, prior_inv, index, blocks: Vec::new() };
        data.blocks = build_blocks(&data);
        Ok(Self { data: Arc::new(data) })
    }

    pub fn horizon(&self) -> Horizon {
        self.data.horizon
    }
    pub fn sys(&self) -> &GaussMarkovSystem {
        &self.data.sys
    }
    pub fn bank(&self) -> &SensorBank {
        &self.data.bank
    }
    pub fn beta(&self) -> f64 {
        self.data.beta
    }
    pub fn prior(&self) -> &DMatrix<f64> {
        &self.data.prior
    }
    pub fn index(&self) -> &VarIndex {
        &self.data.index
    }
    pub fn blocks(&self) -> &[LmiBlock] {
        &self.data.blocks
    }
    pub fn steps(&self) -> usize {
        self.data.horizon.steps()
    }
    pub fn sensors(&self) -> usize {
        self.data.bank.len()
    }
    pub fn n_vars(&self) -> usize {
        self.data.index.len()
    }

    /// Objective weights α_i/2, divided by T for finite horizons.
    pub fn weights(&self) -> DVector<f64> {
        self.data.bank.alpha() * (0.5 / self.steps() as f64)
    }

    /// Same program with a different budget.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::assemble(&self.data.sys, &self.data.bank, self.data.horizon, beta, self.data.prior.clone())
    }

    /// Same program restricted to a subset of sensors.
    pub fn restricted(&self, sensors: &[usize]) -> Result<Self> {
        let bank = self.data.bank.subset(sensors)?;
        Self::assemble(&self.data.sys, &bank, self.data.horizon, self.data.beta, self.data.prior.clone())
    }

    pub fn delta_table(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let ix = &self.data.index;
        DMatrix::from_fn(self.steps(), self.sensors(), |t, i| x[ix.delta(t, i)])
    }

    pub fn gamma_table(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let ix = &self.data.index;
        DMatrix::from_fn(self.steps(), self.sensors(), |t, i| x[ix.gamma(t, i)])
    }

    pub fn s_matrix(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        let n = self.sys().n();
        DMatrix::from_fn(n, n, |a, b| x[self.data.index.s(t, a, b)])
    }

    /// Q_{t|t-1} at x (the fixed prior information for t = 0 of a finite horizon).
    pub fn q_pred_matrix(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        let n = self.sys().n();
        match self.data.index.q_pred(t, 0, 0) {
            Some(_) => DMatrix::from_fn(n, n, |a, b| x[self.data.index.q_pred(t, a, b).unwrap()]),
            None => self.data.prior_inv.clone().expect("finite programs carry the prior inverse"),
        }
    }

    /// Σ_i δ_{i,t} C_iᵀ C_i.
    pub fn information_gain(&self, delta_row: &[f64]) -> DMatrix<f64> {
        let c = self.bank().c();
        let d = DVector::from_iterator(delta_row.len(), delta_row.iter().map(|v| v.max(0.0)));
        c.transpose() * DMatrix::from_diagonal(&d) * c
    }

    pub fn q_filt_matrix(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        let row: Vec<f64> = self.delta_table(x).row(t).iter().cloned().collect();
        self.q_pred_matrix(x, t) + self.information_gain(&row)
    }

    /// Σ w_i (ln δ − ln γ), nats.
    pub fn dc_objective(&self, x: &DVector<f64>) -> f64 {
        let w = self.weights();
        let ix = &self.data.index;
        let mut total = 0.0;
        for t in 0..self.steps() {
            for i in 0..self.sensors() {
                total += w[i] * (x[ix.delta(t, i)].ln() - x[ix.gamma(t, i)].ln());
            }
        }
        total
    }

    /// Kalman covariances for a precision table; `inflate` adds εI to every
    /// predicted covariance after the first (used to build strictly feasible points).
    pub fn covariances(&self, delta: &DMatrix<f64>, inflate: f64) -> Result<Covariances> {
        self.check_table(delta)?;
        let sys = self.sys();
        let n = sys.n();
        let eye = DMatrix::<f64>::identity(n, n);
        let mut p_pred = Vec::with_capacity(self.steps());
        let mut p_filt = Vec::with_capacity(self.steps());
        match self.horizon() {
            Horizon::Finite(steps) => {
                let mut pp = self.prior().clone();
                for t in 0..steps {
                    let pf = self.filter_step(&pp, delta, t)?;
                    let next = kalman::time_update(&pf, sys) + &eye * inflate;
                    p_pred.push(pp);
                    p_filt.push(pf);
                    pp = next;
                }
            }
            Horizon::Infinite => {
                let row: Vec<f64> = delta.row(0).iter().cloned().collect();
                let d = self.information_gain(&row);
                let pp = kalman::stationary_prediction(sys.a(), &(sys.noise_cov() + &eye * inflate), &d)?;
                let pf = self.filter_step(&pp, delta, 0)?;
                p_pred.push(pp);
                p_filt.push(pf);
            }
        }
        Ok(Covariances { p_pred, p_filt })
    }

    fn filter_step(&self, p_pred: &DMatrix<f64>, delta: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
        let active: Vec<usize> = (0..self.sensors()).filter(|&i| delta[(t, i)] > 0.0).collect();
        let c = self.bank().c().select_rows(&active);
        let v: Vec<f64> = active.iter().map(|&i| 1.0 / delta[(t, i)]).collect();
        Ok(kalman::measurement_update(p_pred, &c, &v)?.0)
    }

    fn check_table(&self, delta: &DMatrix<f64>) -> Result<()> {
        if delta.shape() != (self.steps(), self.sensors()) {
            return Err(invalid(format!(
                "precision table must be {}x{}, got {}x{}",
                self.steps(),
                self.sensors(),
                delta.nrows(),
                delta.ncols()
            )));
        }
        if delta.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("precisions must be finite and non-negative"));
        }
        Ok(())
    }

    /// Gaussian-model MSE (1/T) Σ tr P_{t|t}; infinite when the filter has no steady state.
    pub fn mse(&self, delta: &DMatrix<f64>) -> f64 {
        self.covariances(delta, 0.0).map(|c| c.mean_trace()).unwrap_or(f64::INFINITY)
    }

    /// c_i P_{t|t-1} c_iᵀ for every (t, i).
    pub fn innovation_variances(&self, cov: &Covariances) -> DMatrix<f64> {
        DMatrix::from_fn(self.steps(), self.sensors(), |t, i| linalg::quad_form(&cov.p_pred[t], &self.bank().row(i)))
    }

    /// DC objective with every γ on its bound: Σ w_i ln(1 + δ c P cᵀ), nats.
    pub fn true_objective(&self, delta: &DMatrix<f64>) -> Result<f64> {
        let cov = self.covariances(delta, 0.0)?;
        let s = self.innovation_variances(&cov);
        let w = self.weights();
        Ok((0..self.steps())
            .flat_map(|t| (0..self.sensors()).map(move |i| (t, i)))
            .map(|(t, i)| w[i] * (delta[(t, i)] * s[(t, i)]).ln_1p())
            .sum())
    }

    /// Per-(t, i) mutual information in bits implied by a precision table.
    pub fn mi_table(&self, delta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cov = self.covariances(delta, 0.0)?;
        let s = self.innovation_variances(&cov);
        Ok(DMatrix::from_fn(self.steps(), self.sensors(), |t, i| {
            0.5 * (delta[(t, i)] * s[(t, i)]).ln_1p() / std::f64::consts::LN_2
        }))
    }

    /// Structured point for a strictly positive precision table: γ at `gamma_frac`
    /// of its bound, S = P_{t|t} + s_inflate·I and Q_{t|t-1} from the Kalman
    /// recursion with `q_inflate` added to each predicted covariance.
    pub fn point_from_delta(&self, delta: &DMatrix<f64>, gamma_frac: f64, s_inflate: f64, q_inflate: f64) -> Result<DVector<f64>> {
        self.check_table(delta)?;
        if delta.iter().any(|v| *v <= 0.0) {
            return Err(invalid("structured points need strictly positive precisions"));
        }
        self.structured_point(delta, gamma_frac, s_inflate, q_inflate)
    }

    /// The all-silent point: δ = γ = 0 with the open-loop covariances. It sits on
    /// the boundary of the barrier domain, so it is a result, not a warm start.
    pub fn open_loop_point(&self) -> Result<DVector<f64>> {
        self.structured_point(&DMatrix::zeros(self.steps(), self.sensors()), 1.0, 0.0, 0.0)
    }

    fn structured_point(&self, delta: &DMatrix<f64>, gamma_frac: f64, s_inflate: f64, q_inflate: f64) -> Result<DVector<f64>> {
        let cov = self.covariances(delta, q_inflate)?;
        let s = self.innovation_variances(&cov);
        let ix = &self.data.index;
        let n = self.sys().n();
        let mut x = DVector::zeros(self.n_vars());
        for t in 0..self.steps() {
            for i in 0..self.sensors() {
                let d = delta[(t, i)];
                x[ix.delta(t, i)] = d;
                x[ix.gamma(t, i)] = if d > 0.0 { gamma_frac / (1.0 / d + s[(t, i)]) } else { 0.0 };
            }
            for a in 0..n {
                for b in a..n {
                    x[ix.s(t, a, b)] = cov.p_filt[t][(a, b)] + if a == b { s_inflate } else { 0.0 };
                }
            }
            if ix.q_pred(t, 0, 0).is_some() {
                let q = linalg::spd_inverse(&cov.p_pred[t], "predicted covariance")?;
                for a in 0..n {
                    for b in a..n {
                        x[ix.q_pred(t, a, b).unwrap()] = q[(a, b)];
                    }
                }
            }
        }
        Ok(x)
    }

    /// Minimum eigenvalue of every block at x, with the block's scale.
    pub fn block_eigenvalues(&self, x: &DVector<f64>) -> Vec<BlockCheck> {
        self.blocks()
            .iter()
            .map(|b| {
                let z = b.evaluate(x);
                BlockCheck { name: b.name.clone(), min_eig: linalg::min_eigenvalue(&z), scale: linalg::max_abs(&z).max(1.0) }
            })
            .collect()
    }

    /// Largest scaled constraint violation max(0, −λ_min / scale) over blocks.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.block_eigenvalues(x).iter().map(|c| (-c.min_eig / c.scale).max(0.0)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub min_eig: f64,
    pub scale: f64,
}

fn build_blocks(p: &ProgramData) -> Vec<LmiBlock> {
    let n = p.sys.n();
    let m = p.sys.m();
    let ix = &p.index;
    let c = p.bank.c();
    let steps = p.horizon.steps();
    let mut out = Vec::new();

    let add_q_pred = |b: &mut BlockBuilder, t: usize, r0: usize| match ix.q_pred(t, 0, 0) {
        Some(_) => {
            for a in 0..n {
                for bb in a..n {
                    b.var(ix.q_pred(t, a, bb).unwrap(), r0 + a, r0 + bb, 1.0);
                }
            }
        }
        None => b.constant_matrix(r0, r0, p.prior_inv.as_ref().unwrap()),
    };
    let add_gain = |b: &mut BlockBuilder, t: usize, r0: usize| {
        for i in 0..p.bank.len() {
            for j in 0..n {
                for k in j..n {
                    b.var(ix.delta(t, i), r0 + j, r0 + k, c[(i, j)] * c[(i, k)]);
                }
            }
        }
    };

    for t in 0..steps {
        for i in 0..p.bank.len() {
            let mut b = BlockBuilder::new(format!("sensor[{},{}]", t + 1, i + 1), n + 1);
            b.var(ix.delta(t, i), 0, 0, 1.0);
            b.var(ix.gamma(t, i), 0, 0, -1.0);
            for j in 0..n {
                b.var(ix.delta(t, i), 0, 1 + j, c[(i, j)]);
                for k in j..n {
                    b.var(ix.delta(t, i), 1 + j, 1 + k, c[(i, j)] * c[(i, k)]);
                }
            }
            add_q_pred(&mut b, t, 1);
            out.push(b.build());
        }

        let mut b = BlockBuilder::new(format!("mse[{}]", t + 1), 2 * n);
        for a in 0..n {
            for bb in a..n {
                b.var(ix.s(t, a, bb), a, bb, 1.0);
            }
            b.constant(a, n + a, 1.0);
        }
        add_q_pred(&mut b, t, n);
        add_gain(&mut b, t, n);
        out.push(b.build());

        let has_propagation = match p.horizon {
            Horizon::Finite(_) => t >= 1,
            Horizon::Infinite => true,
        };
        if has_propagation {
            let prev = match p.horizon {
                Horizon::Finite(_) => t - 1,
                Horizon::Infinite => 0,
            };
            let name = match p.horizon {
                Horizon::Finite(_) => format!("propagation[{}]", t + 1),
                Horizon::Infinite => "stationarity".to_string(),
            };
            let a_mat = p.sys.a();
            let f_mat = p.sys.f();
            let mut b = BlockBuilder::new(name, 2 * n + m);
            for a in 0..n {
                for bb in a..n {
                    let v = ix.q_pred(t, a, bb).unwrap();
                    b.var(v, a, bb, 1.0);
                    for k in 0..n {
                        b.var(v, a, n + k, a_mat[(bb, k)]);
                        if a != bb {
                            b.var(v, bb, n + k, a_mat[(a, k)]);
                        }
                    }
                    for k in 0..m {
                        b.var(v, a, 2 * n + k, f_mat[(bb, k)]);
                        if a != bb {
                            b.var(v, bb, 2 * n + k, f_mat[(a, k)]);
                        }
                    }
                }
            }
            add_q_pred(&mut b, prev, n);
            add_gain(&mut b, prev, n);
            for k in 0..m {
                b.constant(2 * n + k, 2 * n + k, 1.0);
            }
            out.push(b.build());
        }
    }

    let mut b = BlockBuilder::new("budget", 1);
    b.constant(0, 0, p.beta);
    for t in 0..steps {
        for a in 0..n {
            b.var(ix.s(t, a, a), 0, 0, -1.0 / steps as f64);
        }
    }
    out.push(b.build());
    out
}

/// A CCP subproblem: the DC objective with log δ replaced by its tangent at δ̂.
///
/// Objective (nats): `linear·x + Σ w_j (−ln x_j) + constant`.
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub program: DCProgram,
    pub expansion: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub neg_log: Vec<(usize, f64)>,
    pub constant: f64,
}

impl ConvexSubproblem {
    pub fn n_vars(&self) -> usize {
        self.program.n_vars()
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        self.program.blocks()
    }

    /// Objective value; +∞ outside the domain of the log terms.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut f = self.linear.dot(x) + self.constant;
        for &(v, w) in &self.neg_log {
            if x[v] <= 0.0 {
                return f64::INFINITY;
            }
            f -= w * x[v].ln();
        }
        f
    }

    /// Objective with γ on its bound, as a function of the precisions only.
    pub fn value_at_delta(&self, delta: &DMatrix<f64>) -> Result<f64> {
        let p = &self.program;
        let cov = p.covariances(delta, 0.0)?;
        let s = p.innovation_variances(&cov);
        let w = p.weights();
        let mut f = 0.0;
        for t in 0..p.steps() {
            for i in 0..p.sensors() {
                let (d, dh) = (delta[(t, i)], self.expansion[(t, i)]);
                f += w[i] * (d / dh - 1.0 + dh.ln() + (1.0 / d + s[(t, i)]).ln());
            }
        }
        Ok(f)
    }
}

/// Replaces each ln δ by its tangent at `delta_hat`, which upper-bounds it.
pub fn linearize_subproblem(prog: &DCProgram, delta_hat: &DMatrix<f64>) -> Result<ConvexSubproblem> {
    if delta_hat.shape() != (prog.steps(), prog.sensors()) {
        return Err(invalid("expansion point has the wrong shape"));
    }
    if delta_hat.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("expansion point must be strictly positive"));
    }
    let w = prog.weights();
    let ix = prog.index();
    let mut linear = DVector::zeros(prog.n_vars());
    let mut neg_log = Vec::with_capacity(prog.steps() * prog.sensors());
    let mut constant = 0.0;
    for t in 0..prog.steps() {
        for i in 0..prog.sensors() {
            let dh = delta_hat[(t, i)];
            linear[ix.delta(t, i)] = w[i] / dh;
            neg_log.push((ix.gamma(t, i), w[i]));
            constant += w[i] * (dh.ln() - 1.0);
        }
    }
    Ok(ConvexSubproblem { program: prog.clone(), expansion: delta_hat.clone(), linear, neg_log, constant })
}

/// One step of the covariance reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructedStep {
    pub q_pred_relaxed: DMatrix<f64>,
    pub q_filt_relaxed: DMatrix<f64>,
    pub q_pred: DMatrix<f64>,
    pub q_filt: DMatrix<f64>,
    /// λ_min(Q** − Q*) for the filtered information.
    pub min_eig_gap: f64,
}

/// Rebuilds the exact information matrices implied by the precisions of a
/// relaxed solution and checks that they dominate the relaxed ones.
///
/// `Q**_{1|1} = Q*_{1|1}`, `Q**_{t|t-1} = (A Q**_{t-1|t-1}⁻¹ Aᵀ + FFᵀ)⁻¹`,
/// `Q**_{t|t} = Q**_{t|t-1} + Σ δ C_iᵀC_i`.
pub fn reconstruct_covariances(prog: &DCProgram, x: &DVector<f64>, tol: f64) -> Result<Vec<ReconstructedStep>> {
    let sys = prog.sys();
    let delta = prog.delta_table(x);
    let mut out: Vec<ReconstructedStep> = Vec::with_capacity(prog.steps());
    for t in 0..prog.steps() {
        let q_pred_relaxed = prog.q_pred_matrix(x, t);
        let q_filt_relaxed = prog.q_filt_matrix(x, t);
        let (q_pred, q_filt) = if t == 0 && prog.horizon() != Horizon::Infinite {
            (q_pred_relaxed.clone(), q_filt_relaxed.clone())
        } else {
            let prev_filt = if prog.horizon() == Horizon::Infinite { &q_filt_relaxed } else { &out[t - 1].q_filt };
            let p_prev = linalg::spd_inverse(prev_filt, "reconstructed filtered information")?;
            let p_pred = kalman::time_update(&p_prev, sys);
            let q_pred = linalg::spd_inverse(&p_pred, "reconstructed predicted covariance")?;
            let row: Vec<f64> = delta.row(t).iter().cloned().collect();
            let q_filt = &q_pred + prog.information_gain(&row);
            (q_pred, q_filt)
        };
        let gap = &q_filt - &q_filt_relaxed;
        let gap_pred = &q_pred - &q_pred_relaxed;
        let min_eig_gap = linalg::min_eigenvalue(&gap).min(linalg::min_eigenvalue(&gap_pred));
        let scale = linalg::max_abs(&q_filt).max(1.0);
        if min_eig_gap < -tol * scale {
            return Err(Error::RelaxationInconsistency { step: t + 1, min_eig: min_eig_gap });
        }
        out.push(ReconstructedStep { q_pred_relaxed, q_filt_relaxed, q_pred, q_filt, min_eig_gap });
    }
    Ok(out)
}

/// Relative threshold below which a precision counts as zero rate.
pub const ZERO_THRESHOLD: f64 = 1e-6;

/// Per-step, per-sensor precisions; zero means the sensor sends nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    delta: DMatrix<f64>,
}

impl Allocation {
    pub fn from_delta(delta: DMatrix<f64>) -> Result<Self> {
        if delta.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("allocation precisions must be finite and non-negative"));
        }
        Ok(Self { delta })
    }

    pub fn zeros(steps: usize, sensors: usize) -> Self {
        Self { delta: DMatrix::zeros(steps, sensors) }
    }

    pub fn steps(&self) -> usize {
        self.delta.nrows()
    }
    pub fn sensors(&self) -> usize {
        self.delta.ncols()
    }
    pub fn delta_table(&self) -> &DMatrix<f64> {
        &self.delta
    }
    pub fn delta(&self, t: usize, i: usize) -> f64 {
        self.delta[(t, i)]
    }
    pub fn is_active(&self, t: usize, i: usize) -> bool {
        self.delta[(t, i)] > 0.0
    }
    /// V = 1/δ, infinite for silent sensors.
    pub fn variance(&self, t: usize, i: usize) -> f64 {
        let d = self.delta[(t, i)];
        if d > 0.0 {
            1.0 / d
        } else {
            f64::INFINITY
        }
    }
    /// Quantizer step √(12 V) for active sensors.
    pub fn sensitivity(&self, t: usize, i: usize) -> Option<f64> {
        self.is_active(t, i).then(|| (12.0 * self.variance(t, i)).sqrt())
    }
    pub fn support(&self, t: usize) -> Vec<bool> {
        (0..self.sensors()).map(|i| self.is_active(t, i)).collect()
    }
    pub fn support_size(&self, t: usize) -> usize {
        self.support(t).iter().filter(|&&b| b).count()
    }
    pub fn active(&self, t: usize) -> Vec<usize> {
        (0..self.sensors()).filter(|&i| self.is_active(t, i)).collect()
    }
    /// Row to use at simulation step t; the last row repeats past the end.
    pub fn row_for_step(&self, t: usize) -> usize {
        t.min(self.steps() - 1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "sensor", "delta", "variance", "sensitivity", "active"]).map_err(csv_err)?;
        for t in 0..self.steps() {
            for i in 0..self.sensors() {
                let sens = self.sensitivity(t, i).map(|s| s.to_string()).unwrap_or_else(|| "inf".into());
                w.write_record([
                    (t + 1).to_string(),
                    (i + 1).to_string(),
                    self.delta(t, i).to_string(),
                    self.variance(t, i).to_string(),
                    sens,
                    u8::from(self.is_active(t, i)).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Allocation::write_csv`]; only `t`, `sensor`
    /// and `delta` are used.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_err)?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| invalid(format!("allocation CSV lacks column '{name}'")));
        let (ct, ci, cd) = (col("t")?, col("sensor")?, col("delta")?);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let parse_idx = |c: usize| -> Result<usize> {
                rec.get(c).and_then(|s| s.trim().parse::<usize>().ok()).filter(|&v| v >= 1).ok_or_else(|| invalid(format!("bad index in allocation row {rec:?}")))
            };
            let d: f64 = rec.get(cd).and_then(|s| s.trim().parse().ok()).ok_or_else(|| invalid(format!("bad delta in allocation row {rec:?}")))?;
            rows.push((parse_idx(ct)? - 1, parse_idx(ci)? - 1, d));
        }
        if rows.is_empty() {
            return Err(invalid("allocation CSV has no rows"));
        }
        let steps = rows.iter().map(|r| r.0).max().unwrap() + 1;
        let sensors = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let mut delta = DMatrix::zeros(steps, sensors);
        let mut seen = DMatrix::from_element(steps, sensors, false);
        for (t, i, d) in rows {
            if seen[(t, i)] {
                return Err(invalid(format!("duplicate allocation entry for t={} sensor={}", t + 1, i + 1)));
            }
            seen[(t, i)] = true;
            delta[(t, i)] = d;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("allocation CSV does not cover every (t, sensor) pair"));
        }
        Self::from_delta(delta)
    }
}

/// Zeroes precisions below `zero_threshold · max δ` and returns the allocation.
pub fn extract_allocation(delta: &DMatrix<f64>, zero_threshold: f64) -> Result<Allocation> {
    let max = delta.iter().cloned().fold(0.0, f64::max);
    let cut = zero_threshold * max;
    Allocation::from_delta(delta.map(|d| if d > cut && d > 0.0 { d } else { 0.0 }))
}

#[cfg(test)]
mod tests;
