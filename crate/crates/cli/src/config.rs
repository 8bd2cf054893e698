//! Run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use rate_alloc_core::ccp::CcpOptions;
use rate_alloc_core::dc_program::{DCProgram, Horizon};
use rate_alloc_core::info_cost::{airtime_weights, capacity, link_snr};
use rate_alloc_core::model::{GaussMarkovSystem, SensorBank};
use rate_alloc_core::scenarios::drone::DroneConfig;
use rate_alloc_core::scenarios::heat::HeatConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[default]
    Heat,
    Drone,
    Scalar,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    #[default]
    Infinite,
    Finite(usize),
}

impl From<HorizonMode> for Horizon {
    fn from(h: HorizonMode) -> Self {
        match h {
            HorizonMode::Infinite => Horizon::Infinite,
            HorizonMode::Finite(t) => Horizon::Finite(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
    Airtime,
}

/// Physical link of one sensor, for airtime weights.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub path_gain: f64,
    pub tx_power: f64,
    pub range: f64,
    pub bandwidth: f64,
    pub noise_density: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarConfig {
    pub a: f64,
    pub f: f64,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        Self { a: 0.9, f: 1.0 }
    }
}

/// Matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub a: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub p_init: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub horizon: HorizonMode,
    pub beta: f64,
    pub beta_grid: Vec<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub weights: WeightMode,
    pub links: Vec<LinkConfig>,
    pub heat: HeatConfig,
    pub drone: DroneConfig,
    pub drone_steps: usize,
    pub scalar: ScalarConfig,
    pub system: Option<CustomSystem>,
    pub simulate_steps: usize,
    /// Write every CCP subproblem as a JSON dump under `<out>/dumps`.
    pub dump_subproblems: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ccp = CcpOptions::default();
        Self {
            scenario: ScenarioKind::Heat,
            horizon: HorizonMode::Infinite,
            beta: 1.0,
            beta_grid: Vec::new(),
            tolerance: ccp.tolerance,
            max_iter: ccp.max_iter,
            seed: 1,
            out: PathBuf::from("out"),
            weights: WeightMode::Uniform,
            links: Vec::new(),
            heat: HeatConfig::default(),
            drone: DroneConfig::default(),
            drone_steps: 100,
            scalar: ScalarConfig::default(),
            system: None,
            simulate_steps: 10_000,
            dump_subproblems: false,
        }
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| anyhow::anyhow!("line {} column {}: {e}", e.line(), e.column()))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("{what} must be a non-empty rectangular array of rows");
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn ccp_options(&self) -> CcpOptions {
        CcpOptions { tolerance: self.tolerance, max_iter: self.max_iter, ..CcpOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            bail!("beta must be finite and non-negative, got {}", self.beta);
        }
        if !(self.tolerance > 0.0) || self.max_iter == 0 {
            bail!("tolerance and max_iter must be positive");
        }
        if self.scenario == ScenarioKind::Custom && self.system.is_none() {
            bail!("the custom scenario needs a \"system\" section");
        }
        Ok(())
    }

    /// Source model and sensor bank of a linear scenario.
    pub fn linear_model(&self) -> Result<(GaussMarkovSystem, SensorBank, Horizon)> {
        let (sys, bank, horizon) = match self.scenario {
            ScenarioKind::Heat => {
                let (sys, bank) = self.heat.system()?;
                (sys, bank, Horizon::Infinite)
            }
            ScenarioKind::Scalar => {
                let sys = GaussMarkovSystem::scalar(self.scalar.a, self.scalar.f, 1.0)?;
                let bank = SensorBank::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0))?;
                (sys, bank, Horizon::Infinite)
            }
            ScenarioKind::Custom => {
                let s = self.system.as_ref().context("missing \"system\" section")?;
                let sys = GaussMarkovSystem::new(matrix(&s.a, "system.a")?, matrix(&s.f, "system.f")?, matrix(&s.p_init, "system.p_init")?)?;
                let c = matrix(&s.c, "system.c")?;
                let alpha = match &s.alpha {
                    Some(a) => DVector::from_column_slice(a),
                    None => DVector::from_element(c.nrows(), 1.0),
                };
                let bank = match &s.labels {
                    Some(l) => SensorBank::with_labels(c, alpha, l.clone())?,
                    None => SensorBank::new(c, alpha)?,
                };
                (sys, bank, self.horizon.into())
            }
            ScenarioKind::Drone => bail!("the drone scenario is not a fixed linear model"),
        };
        let bank = match self.weights {
            WeightMode::Uniform => bank,
            WeightMode::Airtime => bank.with_alpha(self.airtime_alpha(bank.len())?)?,
        };
        Ok((sys, bank, horizon))
    }

    /// Seconds per unit of weighted rate: the mean airtime weight, or 1 for uniform weights.
    pub fn weight_scale(&self) -> Result<f64> {
        match self.weights {
            WeightMode::Uniform => Ok(1.0),
            WeightMode::Airtime => Ok(self.raw_airtime(self.links.len())?.mean()),
        }
    }

    /// Airtime weights normalized to mean 1; the optimum is unchanged and the
    /// solver tolerances keep their meaning.
    fn airtime_alpha(&self, sensors: usize) -> Result<DVector<f64>> {
        let raw = self.raw_airtime(sensors)?;
        let mean = raw.mean();
        Ok(raw / mean)
    }

    fn raw_airtime(&self, sensors: usize) -> Result<DVector<f64>> {
        if self.links.len() != sensors {
            bail!("airtime weights need one link per sensor: {} links for {sensors} sensors", self.links.len());
        }
        let caps: Vec<f64> = self
            .links
            .iter()
            .map(|l| capacity(l.bandwidth, link_snr(l.path_gain, l.tx_power, l.range, l.bandwidth, l.noise_density)))
            .collect();
        Ok(airtime_weights(&caps)?)
    }

    pub fn program(&self, beta: f64) -> Result<DCProgram> {
        let (sys, bank, horizon) = self.linear_model()?;
        Ok(match horizon {
            Horizon::Infinite => DCProgram::assemble_infinite(&sys, &bank, beta)?,
            Horizon::Finite(t) => DCProgram::assemble_finite(&sys, &bank, t, beta)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse(r#"{"scenario": "scalar", "beta": 2.0, "scalar": {"a": 0.5}}"#).unwrap();
        assert_eq!(cfg.scenario, ScenarioKind::Scalar);
        assert_eq!(cfg.scalar.a, 0.5);
        assert_eq!(cfg.scalar.f, 1.0);
        assert_eq!(cfg.max_iter, 100);
        let prog = cfg.program(cfg.beta).unwrap();
        assert_eq!(prog.sensors(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{"betta": 1.0}"#).is_err());
        assert!(parse(r#"{"heat": {"nodez": 3}}"#).is_err());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse("{\n  \"beta\": ,\n}").unwrap_err().to_string();
        assert!(err.contains("line 2 column"), "{err}");
    }

    #[test]
    fn finite_horizon_custom_system() {
        let cfg = parse(
            r#"{"scenario": "custom", "horizon": {"finite": 3},
                "system": {"a": [[0.5, 0], [0, 0.5]], "f": [[1, 0], [0, 1]], "p_init": [[1, 0], [0, 1]],
                           "c": [[1, 0], [0, 1], [1, 1]]}}"#,
        )
        .unwrap();
        let prog = cfg.program(1.0).unwrap();
        assert_eq!(prog.steps(), 3);
        assert_eq!(prog.sensors(), 3);
    }

    #[test]
    fn airtime_weights_follow_range() {
        let link = |range: f64| LinkConfig { path_gain: 1.0, tx_power: 1.0, range, bandwidth: 1e6, noise_density: 1e-9 };
        let cfg = RunConfig {
            scenario: ScenarioKind::Scalar,
            weights: WeightMode::Airtime,
            links: vec![link(10.0)],
            ..RunConfig::default()
        };
        let (_, bank, _) = cfg.linear_model().unwrap();
        assert_eq!(bank.alpha()[0], 1.0);
        let snr: f64 = 1.0 / (100.0 * 1e6 * 1e-9);
        assert!((cfg.weight_scale().unwrap() - 1.0 / (1e6 * (1.0 + snr).log2())).abs() < 1e-18);

        // Farther links cost more airtime per bit.
        let two = RunConfig { links: vec![link(10.0), link(40.0)], ..cfg.clone() };
        let alpha = two.airtime_alpha(2).unwrap();
        assert!(alpha[1] > alpha[0]);
        assert!((alpha.mean() - 1.0).abs() < 1e-15);
        let bad = RunConfig { links: vec![], ..cfg };
        assert!(bad.linear_model().is_err());
    }

    #[test]
    fn shipped_configs_parse_and_validate() {
        for text in [
            include_str!("../../../configs/heat.json"),
            include_str!("../../../configs/drone.json"),
            include_str!("../../../configs/custom_airtime.json"),
        ] {
            parse(text).unwrap().validate().unwrap();
        }
        let custom = parse(include_str!("../../../configs/custom_airtime.json")).unwrap();
        let (_, bank, horizon) = custom.linear_model().unwrap();
        assert!((bank.alpha().mean() - 1.0).abs() < 1e-12);
        assert_eq!(horizon, Horizon::Finite(4));
    }
}
