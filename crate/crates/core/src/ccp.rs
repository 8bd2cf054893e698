//! Convex-concave procedure over [`DCProgram`]s.
//!
//! Each iteration replaces ln δ by its tangent at the previous precisions,
//! solves the convex subproblem and stops once the optimum decreases by no
//! more than the tolerance. Iterates stay feasible because each subproblem's
//! feasible set is the original one.
//!
//! Interior-point iterates never reach δ = 0 exactly, and sensors heading to
//! zero rate only decay like 1/k. After the loop, entries that are negligible
//! (relative precision below [`ZERO_THRESHOLD`] or less than `mi_floor_bits`
//! of information) are dropped when the budget allows it, otherwise the
//! remaining sensors are refitted.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::convex_engine::{self, phase1, SolveStatus, SolverOptions};
use crate::dc_program::{extract_allocation, linearize_subproblem, Allocation, DCProgram, Horizon, ZERO_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::info_cost::csv_err;
use crate::model::{GaussMarkovSystem, SensorBank};

#[derive(Debug, Clone, PartialEq)]
pub struct CcpOptions {
    /// Stop when f^{k-1} − f^k ≤ tolerance (nats).
    pub tolerance: f64,
    pub max_iter: usize,
    pub solver: SolverOptions,
    pub zero_threshold: f64,
    pub mi_floor_bits: f64,
    pub polish: bool,
    /// Relative slack allowed on the budget when checking iterates.
    pub budget_tol: f64,
}

impl Default for CcpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 100,
            solver: SolverOptions::default(),
            zero_threshold: ZERO_THRESHOLD,
            mi_floor_bits: 0.01,
            polish: true,
            budget_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIter,
    SolverFailure(String),
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Subproblem optimum f^k, nats.
    pub objective: f64,
    /// Expansion point δ̂ the subproblem was linearized at.
    pub expansion: DMatrix<f64>,
    /// Subproblem solution (full variable vector).
    pub x: DVector<f64>,
    /// Weighted information rate at δ^k, bits per step.
    pub rate_bits: f64,
    pub delta: DMatrix<f64>,
    pub support_size: usize,
    pub mse: f64,
    pub max_violation: f64,
    pub feasible: bool,
    pub solver_status: SolveStatus,
    pub newton_steps: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolishOutcome {
    Unchanged,
    Dropped { entries: usize },
    Refitted { sensors: usize },
    Rejected,
}

#[derive(Debug, Clone)]
pub struct CcpTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub polish: PolishOutcome,
}

impl CcpTrace {
    /// Largest increase f^k − f^{k−1} over the run (≤ 0 for a monotone trace).
    pub fn max_increase(&self) -> f64 {
        self.records.windows(2).map(|w| w[1].objective - w[0].objective).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_feasible(&self) -> bool {
        self.records.iter().all(|r| r.feasible)
    }

    /// Columns: iteration, objective (nats), support_size, rate_bits, mse,
    /// max_violation, feasible, solver_status, newton_steps.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective", "support_size", "rate_bits", "mse", "max_violation", "feasible", "solver_status", "newton_steps"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.objective.to_string(),
                r.support_size.to_string(),
                r.rate_bits.to_string(),
                r.mse.to_string(),
                r.max_violation.to_string(),
                u8::from(r.feasible).to_string(),
                format!("{:?}", r.solver_status).to_lowercase(),
                r.newton_steps.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CcpResult {
    pub allocation: Allocation,
    /// Weighted information rate of the final allocation, bits per step.
    pub rate_bits: f64,
    /// Gaussian-model MSE of the final allocation.
    pub mse: f64,
    /// Last subproblem solution (before polishing).
    pub x: DVector<f64>,
    pub trace: CcpTrace,
}

impl CcpResult {
    pub fn converged(&self) -> bool {
        self.trace.termination == Termination::Converged
    }
}

/// Weighted rate in bits of a precision table (the DC objective with γ on its bound).
pub fn rate_bits(program: &DCProgram, delta: &DMatrix<f64>) -> Result<f64> {
    Ok(program.true_objective(delta)? / std::f64::consts::LN_2)
}

fn total_support(delta: &DMatrix<f64>) -> usize {
    delta.iter().filter(|d| **d > 0.0).count()
}

/// Algorithm 1 from `init_delta` (all ones by default).
pub fn run_ccp(program: &DCProgram, init_delta: Option<&DMatrix<f64>>, opts: &CcpOptions) -> Result<CcpResult> {
    if let Some(res) = silent_if_affordable(program, opts)? {
        return Ok(res);
    }
    let mut res = iterate(program, init_delta, opts)?;
    if opts.polish {
        polish(program, &mut res, opts)?;
        prune(program, &mut res, opts)?;
    }
    Ok(res)
}

fn iterate(program: &DCProgram, init_delta: Option<&DMatrix<f64>>, opts: &CcpOptions) -> Result<CcpResult> {
    if program.sensors() == 0 {
        return Err(invalid("the sensor bank is empty"));
    }
    if opts.max_iter == 0 {
        return Err(invalid("max_iter must be positive"));
    }
    let shape = (program.steps(), program.sensors());
    let mut hat = match init_delta {
        Some(d) if d.shape() != shape => return Err(invalid("initial precisions have the wrong shape")),
        Some(d) if d.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
            return Err(invalid("initial precisions must be strictly positive"))
        }
        Some(d) => d.clone(),
        None => DMatrix::from_element(shape.0, shape.1, 1.0),
    };
    // Fails fast with the achievable MSE when the budget is out of reach.
    phase1::uniform_level(program)?;

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut x_prev: Option<DVector<f64>> = None;
    let mut termination = Termination::MaxIter;
    for k in 1..=opts.max_iter {
        let start = Instant::now();
        let sub = linearize_subproblem(program, &hat)?;
        let rep = convex_engine::solve(&sub, x_prev.as_ref(), &opts.solver)?;
        if !rep.is_optimal() {
            termination = Termination::SolverFailure(format!("iteration {k}: {:?}: {}", rep.status, rep.message));
            break;
        }
        let delta = program.delta_table(&rep.x);
        let mse = program.mse(&delta);
        let feasible = rep.max_violation <= opts.solver.feas_tol && mse <= program.beta() * (1.0 + opts.budget_tol);
        records.push(IterationRecord {
            iteration: k,
            objective: rep.objective,
            expansion: hat.clone(),
            x: rep.x.clone(),
            rate_bits: rate_bits(program, &delta)?,
            support_size: total_support(extract_allocation(&delta, opts.zero_threshold)?.delta_table()),
            delta: delta.clone(),
            mse,
            max_violation: rep.max_violation,
            feasible,
            solver_status: rep.status,
            newton_steps: rep.iterations,
            wall_time: start.elapsed(),
        });
        x_prev = Some(rep.x);
        let n = records.len();
        if n >= 2 && records[n - 2].objective - records[n - 1].objective <= opts.tolerance {
            termination = Termination::Converged;
            break;
        }
        hat = delta.map(|d| d.max(f64::MIN_POSITIVE));
    }
    let Some(x) = x_prev else {
        let msg = match &termination {
            Termination::SolverFailure(m) => m.clone(),
            _ => "no iterate".into(),
        };
        return Err(Error::NumericalFailure { what: format!("first CCP subproblem: {msg}"), condition: f64::NAN });
    };
    let last = records.last().expect("at least one record");
    let allocation = extract_allocation(&last.delta, opts.zero_threshold)?;
    let mse = program.mse(allocation.delta_table());
    let rate = rate_bits(program, allocation.delta_table())?;
    Ok(CcpResult { allocation, rate_bits: rate, mse, x, trace: CcpTrace { records, termination, polish: PolishOutcome::Unchanged } })
}

/// The objective is nonnegative and zero with every sensor silent, so a budget
/// the open loop already meets is solved without iterating.
fn silent_if_affordable(program: &DCProgram, opts: &CcpOptions) -> Result<Option<CcpResult>> {
    let zero = DMatrix::zeros(program.steps(), program.sensors());
    let mse = program.mse(&zero);
    if !(mse <= program.beta() * (1.0 + opts.budget_tol)) {
        return Ok(None);
    }
    Ok(Some(CcpResult {
        allocation: Allocation::from_delta(zero)?,
        rate_bits: 0.0,
        mse,
        x: program.open_loop_point()?,
        trace: CcpTrace { records: Vec::new(), termination: Termination::Converged, polish: PolishOutcome::Unchanged },
    }))
}

fn polish(program: &DCProgram, res: &mut CcpResult, opts: &CcpOptions) -> Result<()> {
    let delta = res.allocation.delta_table().clone();
    let max = delta.iter().cloned().fold(0.0, f64::max);
    let mi = program.mi_table(&delta)?;
    let candidate = |t: usize, i: usize| delta[(t, i)] > 0.0 && (delta[(t, i)] < opts.zero_threshold * max || mi[(t, i)] < opts.mi_floor_bits);
    let count = (0..program.steps()).flat_map(|t| (0..program.sensors()).map(move |i| (t, i))).filter(|&(t, i)| candidate(t, i)).count();
    if count == 0 {
        return Ok(());
    }
    let budget = program.beta() * (1.0 + opts.budget_tol);
    let base_rate = res.rate_bits;
    let tol_bits = opts.tolerance / std::f64::consts::LN_2;

    let dropped = DMatrix::from_fn(delta.nrows(), delta.ncols(), |t, i| if candidate(t, i) { 0.0 } else { delta[(t, i)] });
    let mse = program.mse(&dropped);
    if mse <= budget {
        let rate = rate_bits(program, &dropped)?;
        if rate <= base_rate + tol_bits {
            res.allocation = Allocation::from_delta(dropped)?;
            res.rate_bits = rate;
            res.mse = mse;
            res.trace.polish = PolishOutcome::Dropped { entries: count };
            return Ok(());
        }
    }

    // Refit on the sensors that stay active, for programs with a single row.
    let single_row = matches!(program.horizon(), Horizon::Infinite | Horizon::Finite(1));
    let keep: Vec<usize> = (0..program.sensors()).filter(|&i| !candidate(0, i) && delta[(0, i)] > 0.0).collect();
    if !single_row || keep.is_empty() {
        res.trace.polish = PolishOutcome::Rejected;
        return Ok(());
    }
    let restricted = program.restricted(&keep)?;
    let init = DMatrix::from_fn(1, keep.len(), |_, j| delta[(0, keep[j])]);
    let refit = match iterate(&restricted, Some(&init), opts) {
        Ok(r) if !matches!(r.trace.termination, Termination::SolverFailure(_)) => r,
        _ => {
            res.trace.polish = PolishOutcome::Rejected;
            return Ok(());
        }
    };
    let mut full = DMatrix::zeros(1, program.sensors());
    for (j, &i) in keep.iter().enumerate() {
        full[(0, i)] = refit.allocation.delta(0, j);
    }
    let mse = program.mse(&full);
    let rate = rate_bits(program, &full)?;
    if mse <= budget && rate <= base_rate + tol_bits {
        res.allocation = Allocation::from_delta(full)?;
        res.rate_bits = rate;
        res.mse = mse;
        res.trace.polish = PolishOutcome::Refitted { sensors: keep.len() };
    } else {
        res.trace.polish = PolishOutcome::Rejected;
    }
    Ok(())
}

/// Greedily silences active entries, cheapest first, while the budget still
/// holds and the weighted rate drops.
fn prune(program: &DCProgram, res: &mut CcpResult, opts: &CcpOptions) -> Result<()> {
    let budget = program.beta() * (1.0 + opts.budget_tol);
    let mut delta = res.allocation.delta_table().clone();
    let mut pruned = 0;
    loop {
        let mi = program.mi_table(&delta)?;
        let mut order: Vec<(usize, usize)> =
            (0..delta.nrows()).flat_map(|t| (0..delta.ncols()).map(move |i| (t, i))).filter(|&(t, i)| delta[(t, i)] > 0.0).collect();
        order.sort_by(|a, b| mi[*a].total_cmp(&mi[*b]));
        let mut accepted = false;
        for (t, i) in order {
            let mut trial = delta.clone();
            trial[(t, i)] = 0.0;
            let mse = program.mse(&trial);
            if mse > budget {
                continue;
            }
            let rate = rate_bits(program, &trial)?;
            if rate < res.rate_bits {
                delta = trial;
                res.rate_bits = rate;
                res.mse = mse;
                pruned += 1;
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    if pruned > 0 {
        res.allocation = Allocation::from_delta(delta)?;
        res.trace.polish = match res.trace.polish {
            PolishOutcome::Dropped { entries } => PolishOutcome::Dropped { entries: entries + pruned },
            PolishOutcome::Refitted { .. } => res.trace.polish.clone(),
            _ => PolishOutcome::Dropped { entries: pruned },
        };
    }
    Ok(())
}

/// Upper cap for fallback precisions.
pub const FALLBACK_CAP: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Precisions for this step (length M).
    pub delta: DVector<f64>,
    /// Set when the step's budget could not be met and the fallback was used.
    pub flagged: bool,
    /// Gaussian-model tr P_filt with these precisions.
    pub mse: f64,
    pub rate_bits: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
}

/// Re-solves a one-step problem at every time step, warm-started from the
/// previous step's precisions.
#[derive(Debug, Clone)]
pub struct PerStepSolver {
    alpha: DVector<f64>,
    beta: f64,
    opts: CcpOptions,
    prev: Option<DVector<f64>>,
    warm: bool,
}

impl PerStepSolver {
    pub fn new(alpha: DVector<f64>, beta: f64, opts: CcpOptions) -> Self {
        Self { alpha, beta, opts, prev: None, warm: true }
    }

    /// Start every step from δ̂ = 1 instead of the previous solution.
    pub fn cold(mut self) -> Self {
        self.warm = false;
        self
    }

    pub fn previous(&self) -> Option<&DVector<f64>> {
        self.prev.as_ref()
    }

    /// Initial expansion point: the previous precisions with zeros lifted to
    /// 1e-3 of the largest one, or all ones at the first step.
    fn expansion(&self, m: usize) -> DMatrix<f64> {
        match &self.prev {
            Some(p) if self.warm && p.len() == m && p.max() > 0.0 => {
                let floor = 1e-3 * p.max();
                DMatrix::from_fn(1, m, |_, i| p[i].max(floor))
            }
            _ => DMatrix::from_element(1, m, 1.0),
        }
    }

    /// Allocation for one step with Jacobian `c_t` and predicted covariance `prior`.
    pub fn solve_step(&mut self, sys: &GaussMarkovSystem, c_t: &DMatrix<f64>, prior: &DMatrix<f64>) -> Result<StepOutcome> {
        let bank = SensorBank::new(c_t.clone(), self.alpha.clone())?;
        if prior.trace() <= self.beta {
            // Budget met with every sensor silent.
            let delta = DVector::zeros(bank.len());
            self.prev = Some(delta.clone());
            let termination = Some(Termination::Converged);
            return Ok(StepOutcome { delta, flagged: false, mse: prior.trace(), rate_bits: 0.0, iterations: 0, termination });
        }
        let program = DCProgram::assemble_finite_with_prior(sys, &bank, 1, self.beta, prior)?;
        let init = self.expansion(bank.len());
        match run_ccp(&program, Some(&init), &self.opts) {
            Ok(res) if !matches!(res.trace.termination, Termination::SolverFailure(_)) => {
                let delta = res.allocation.delta_table().row(0).transpose();
                self.prev = Some(delta.clone());
                Ok(StepOutcome {
                    delta,
                    flagged: false,
                    mse: res.mse,
                    rate_bits: res.rate_bits,
                    iterations: res.trace.records.len(),
                    termination: Some(res.trace.termination),
                })
            }
            Ok(_) | Err(Error::InfeasibleBudget { .. }) | Err(Error::NumericalFailure { .. }) => {
                let m = bank.len();
                let delta = match &self.prev {
                    Some(p) if p.len() == m && p.max() > 0.0 => {
                        let floor = 1e-3 * p.max();
                        p.map(|d| (2.0 * d.max(floor)).min(FALLBACK_CAP))
                    }
                    _ => DVector::from_element(m, phase1::GRID_HI),
                };
                let table = DMatrix::from_fn(1, m, |_, i| delta[i]);
                let mse = program.mse(&table);
                let rate = rate_bits(&program, &table)?;
                self.prev = Some(delta.clone());
                Ok(StepOutcome { delta, flagged: true, mse, rate_bits: rate, iterations: 0, termination: None })
            }
            Err(e) => Err(e),
        }
    }
}
