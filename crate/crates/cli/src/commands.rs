use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rate_alloc_core::ccp::{run_ccp, CcpResult, Termination};
use rate_alloc_core::dc_program::dump::ProblemDump;
use rate_alloc_core::dc_program::{linearize_subproblem, Allocation, DCProgram};
use rate_alloc_core::error::Error as CoreError;
use rate_alloc_core::info_cost::RateReport;
use rate_alloc_core::network::simulate_network;
use rate_alloc_core::scenarios::drone::{drone_demo, Transport};
use rate_alloc_core::scenarios::heat::{beta_grid, dedup_betas};
use rayon::prelude::*;

use crate::config::{RunConfig, ScenarioKind, WeightMode};

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_dumps(prog: &DCProgram, res: &CcpResult, dir: &Path) -> Result<()> {
    let dir = dir.join("dumps");
    for rec in &res.trace.records {
        let sub = linearize_subproblem(prog, &rec.expansion)?;
        let dump = ProblemDump::from_subproblem(&sub, Some(&rec.x));
        let mut w = create(&dir, &format!("iter_{:03}.json", rec.iteration))?;
        dump.write_json(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<ExitCode> {
    if cfg.scenario == ScenarioKind::Drone {
        return solve_drone(cfg);
    }
    let prog = cfg.program(cfg.beta)?;
    let res = run_ccp(&prog, None, &cfg.ccp_options())?;
    let mi = prog.mi_table(res.allocation.delta_table())?;
    let report = RateReport::new(mi, prog.bank().alpha())?;

    let mut w = create(&cfg.out, "allocation.csv")?;
    res.allocation.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out, "rates.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out, "ccp_trace.csv")?;
    res.trace.write_csv(&mut w)?;
    w.flush()?;
    if cfg.dump_subproblems {
        write_dumps(&prog, &res, &cfg.out)?;
    }

    let support: Vec<usize> = (0..res.allocation.steps()).map(|t| res.allocation.support_size(t)).collect();
    println!(
        "beta {} support {:?} of {} rate {:.6} bits mse {:.6} iterations {} termination {:?}",
        cfg.beta,
        support,
        prog.sensors(),
        res.rate_bits,
        res.mse,
        res.trace.records.len(),
        res.trace.termination
    );
    if cfg.weights == WeightMode::Airtime {
        println!("airtime {:.6e} s per step", res.rate_bits * cfg.weight_scale()?);
    }
    Ok(match &res.trace.termination {
        Termination::Converged => ExitCode::SUCCESS,
        Termination::MaxIter => {
            eprintln!("warning: CCP stopped at the iteration cap; the allocation is feasible but may not be stationary");
            ExitCode::SUCCESS
        }
        Termination::SolverFailure(msg) => {
            eprintln!("error: subproblem solver failed: {msg}");
            ExitCode::from(1)
        }
    })
}

fn solve_drone(cfg: &RunConfig) -> Result<ExitCode> {
    let mut drone = cfg.drone.clone();
    drone.beta = cfg.beta;
    let run = drone_demo(&drone, cfg.drone_steps, cfg.seed, Transport::Allocated, &cfg.ccp_options())?;
    let mut w = create(&cfg.out, "allocation.csv")?;
    run.write_allocations_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out, "trajectories.csv")?;
    run.write_trajectories_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out, "mse.csv")?;
    run.write_mse_csv(&mut w)?;
    w.flush()?;
    let flagged = run.steps.iter().filter(|s| s.flagged).count();
    println!("steps {} distinct supports {} flagged {}", run.steps.len(), run.distinct_supports(), flagged);
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(cfg: &RunConfig, allocation: &Path, steps: usize) -> Result<ExitCode> {
    if cfg.scenario == ScenarioKind::Drone {
        bail!("the drone scenario runs its coded network inside `solve`");
    }
    let (sys, bank, _) = cfg.linear_model()?;
    let file = File::open(allocation).with_context(|| format!("opening {}", allocation.display()))?;
    let alloc = Allocation::read_csv(BufReader::new(file)).with_context(|| format!("reading {}", allocation.display()))?;
    let run = simulate_network(&sys, &bank, &alloc, steps, cfg.seed)?;

    let mut w = create(&cfg.out, "empirical_rates.csv")?;
    run.write_empirical_rates_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&cfg.out, "mse.csv")?;
    run.write_mse_csv(&mut w)?;
    w.flush()?;

    let summary = run.rate_summary();
    let outside = summary.iter().filter(|s| !s.within_sandwich()).count();
    let mi: f64 = summary.iter().map(|s| s.mi_bits).sum();
    let empirical: f64 = summary.iter().map(|s| s.empirical_bits).sum();
    println!(
        "steps {steps} mse {:.6} trace {:.6} mi {mi:.4} bits empirical {empirical:.4} bits sensors outside sandwich {outside}",
        run.mean_sq_error(),
        run.mean_trace()
    );
    Ok(ExitCode::SUCCESS)
}

/// Parses `LO:HI:STEPS`.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, steps] = parts.as_slice() else {
        bail!("--sweep expects LO:HI:STEPS, got {spec:?}");
    };
    let lo: f64 = lo.trim().parse().with_context(|| format!("sweep lower bound {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("sweep upper bound {hi:?}"))?;
    let steps: usize = steps.trim().parse().with_context(|| format!("sweep step count {steps:?}"))?;
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        bail!("sweep bounds must be finite with LO <= HI");
    }
    Ok(beta_grid(lo, hi, steps))
}

struct SweepRow {
    beta: f64,
    outcome: std::result::Result<CcpResult, CoreError>,
}

fn worker_threads() -> Result<Option<usize>> {
    match std::env::var("RATE_ALLOC_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("RATE_ALLOC_THREADS={v:?}"))?;
            if n == 0 {
                bail!("RATE_ALLOC_THREADS must be positive");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

pub fn sweep(cfg: &RunConfig, mut grid: Vec<f64>) -> Result<ExitCode> {
    if cfg.scenario == ScenarioKind::Drone {
        bail!("sweeps run on the linear scenarios only");
    }
    dedup_betas(&mut grid);
    if grid.is_empty() {
        bail!("empty β grid");
    }
    if let Some(bad) = grid.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        bail!("β grid contains {bad}");
    }
    let base = cfg.program(grid[0])?;
    let opts = cfg.ccp_options();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_threads()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        grid.par_iter()
            .map(|&beta| SweepRow { beta, outcome: base.with_beta(beta).and_then(|p| run_ccp(&p, None, &opts)) })
            .collect()
    });

    let mut w = csv::Writer::from_writer(create(&cfg.out, "support_vs_beta.csv")?);
    w.write_record(["beta", "support_size", "rate_bits", "mse", "status"])?;
    for row in &rows {
        match &row.outcome {
            Ok(res) => {
                let support = (0..res.allocation.steps()).map(|t| res.allocation.support_size(t)).max().unwrap_or(0);
                let status = match res.trace.termination {
                    Termination::Converged => "converged",
                    Termination::MaxIter => "max_iter",
                    Termination::SolverFailure(_) => "solver_failure",
                };
                w.write_record([row.beta.to_string(), support.to_string(), res.rate_bits.to_string(), res.mse.to_string(), status.into()])?;
                println!("beta {} support {support} rate {:.6} bits mse {:.6} {status}", row.beta, res.rate_bits, res.mse);
            }
            Err(CoreError::InfeasibleBudget { min_achievable, .. }) => {
                w.write_record([row.beta.to_string(), String::new(), String::new(), min_achievable.to_string(), "infeasible".into()])?;
                println!("beta {} infeasible, minimum achievable MSE {min_achievable:.6e}", row.beta);
            }
            Err(e) => bail!("β = {}: {e}", row.beta),
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        assert_eq!(parse_sweep("1:220:1").unwrap(), vec![1.0]);
        assert_eq!(parse_sweep("0:10:3").unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(parse_sweep("1:2").is_err());
        assert!(parse_sweep("2:1:3").is_err());
        assert!(parse_sweep("a:1:3").is_err());
        assert!(parse_sweep("1:2:0").unwrap().is_empty());
    }
}
