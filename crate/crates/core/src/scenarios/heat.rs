//! Heat-diffusion study: a rod split into equal segments, one thermometer per
//! node, unit weights, infinite-horizon allocation.

use serde::{Deserialize, Serialize};

use crate::ccp::{run_ccp, CcpOptions, CcpResult};
use crate::dc_program::DCProgram;
use crate::error::Result;
use crate::info_cost::RateReport;
use crate::model::{build_heat_system_variant, GaussMarkovSystem, HeatVariant, SensorBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatConfig {
    pub nodes: usize,
    pub diffusivity: f64,
    pub segment_length: f64,
    pub variant: HeatVariant,
    /// Only used by the identity-minus-Laplacian variant.
    pub time_step: f64,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self { nodes: 60, diffusivity: 7.5e-7, segment_length: 0.2459, variant: HeatVariant::AsPrinted, time_step: 1.0 }
    }
}

impl HeatConfig {
    pub fn system(&self) -> Result<(GaussMarkovSystem, SensorBank)> {
        let sys = build_heat_system_variant(self.nodes, self.diffusivity, self.segment_length, self.variant, self.time_step)?;
        let bank = SensorBank::identity(self.nodes)?;
        Ok((sys, bank))
    }

    pub fn program(&self, beta: f64) -> Result<DCProgram> {
        let (sys, bank) = self.system()?;
        DCProgram::assemble_infinite(&sys, &bank, beta)
    }
}

#[derive(Debug, Clone)]
pub struct HeatRun {
    pub beta: f64,
    pub ccp: CcpResult,
    pub report: RateReport,
}

pub fn heat_demo(cfg: &HeatConfig, beta: f64, opts: &CcpOptions) -> Result<HeatRun> {
    let program = cfg.program(beta)?;
    let ccp = run_ccp(&program, None, opts)?;
    let mi = program.mi_table(ccp.allocation.delta_table())?;
    let report = RateReport::new(mi, program.bank().alpha())?;
    Ok(HeatRun { beta, ccp, report })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub beta: f64,
    pub support_size: usize,
    pub rate_bits: f64,
    pub mse: f64,
    pub converged: bool,
}

impl From<&HeatRun> for SweepPoint {
    fn from(run: &HeatRun) -> Self {
        Self {
            beta: run.beta,
            support_size: run.ccp.allocation.support_size(0),
            rate_bits: run.ccp.rate_bits,
            mse: run.ccp.mse,
            converged: run.ccp.converged(),
        }
    }
}

/// Sorted, de-duplicated β grid from `lo` to `hi` with `steps` points.
pub fn beta_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let mut v: Vec<f64> = match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps).map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64).collect(),
    };
    dedup_betas(&mut v);
    v
}

pub fn dedup_betas(v: &mut Vec<f64>) {
    v.sort_by(f64::total_cmp);
    v.dedup();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        assert_eq!(beta_grid(1.0, 220.0, 1), vec![1.0]);
        assert_eq!(beta_grid(1.0, 3.0, 3), vec![1.0, 2.0, 3.0]);
        assert!(beta_grid(1.0, 3.0, 0).is_empty());
        assert_eq!(beta_grid(2.0, 2.0, 5), vec![2.0]);
        let mut v = vec![10.0, 1.0, 10.0, 220.0, 100.0];
        dedup_betas(&mut v);
        assert_eq!(v, vec![1.0, 10.0, 100.0, 220.0]);
    }

    #[test]
    fn small_rod_is_budget_active() {
        let cfg = HeatConfig { nodes: 6, ..HeatConfig::default() };
        let run = heat_demo(&cfg, 1.0, &CcpOptions::default()).unwrap();
        assert!(run.ccp.trace.all_feasible());
        assert!((run.ccp.mse - 1.0).abs() < 1e-5);
        assert_eq!(run.ccp.allocation.support_size(0), 6);
        let open = heat_demo(&cfg, 10.0, &CcpOptions::default()).unwrap();
        assert_eq!(open.ccp.allocation.support_size(0), 0);
    }
}
