use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rate_alloc_core::error::Error as CoreError;

mod commands;
mod config;

use config::{RunConfig, ScenarioKind};

/// Sparse rate allocation for sensor networks.
///
/// Exit status: 0 on success, 2 when the MSE budget is below the
/// achievable minimum, 1 on any other error.
#[derive(Debug, Parser)]
#[command(name = "rate-alloc", version)]
struct Cli {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// MSE budget β.
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    scenario: Option<ScenarioKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run CCP at one budget and write allocation.csv, rates.csv, ccp_trace.csv.
    Solve,
    /// Run the coded network with a stored allocation.
    Simulate {
        /// Allocation CSV (default: <out>/allocation.csv).
        #[arg(long)]
        allocation: Option<PathBuf>,
        /// Number of steps (overrides simulate_steps).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// One CCP run per budget, written to support_vs_beta.csv.
    Sweep {
        /// Budget grid LO:HI:STEPS (overrides beta_grid).
        #[arg(long)]
        sweep: Option<String>,
    },
}

impl Cli {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(beta) = self.beta {
            cfg.beta = beta;
        }
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Solve => commands::solve(&cfg),
        Command::Simulate { allocation, steps } => {
            let path = allocation.clone().unwrap_or_else(|| cfg.out.join("allocation.csv"));
            commands::simulate(&cfg, &path, steps.unwrap_or(cfg.simulate_steps))
        }
        Command::Sweep { sweep } => {
            let grid = match sweep {
                Some(spec) => commands::parse_sweep(spec)?,
                None => cfg.beta_grid.clone(),
            };
            commands::sweep(&cfg, grid)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            if let Some(CoreError::InfeasibleBudget { beta, min_achievable }) = err.downcast_ref::<CoreError>() {
                eprintln!("error: budget β = {beta} is infeasible; the minimum achievable MSE is {min_achievable:.6e}");
                return ExitCode::from(2);
            }
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
