//! Radar tracking of five point-mass targets by a drone swarm.
//!
//! A base station at the origin illuminates the targets; each of the five
//! drones around target i reports a bistatic delay and a Doppler estimate of
//! target i. The fusion center runs an EKF on the 20-dimensional target state,
//! steers the drones with a PD law on its estimates and re-solves a one-step
//! allocation at every step. Sensors quantize their innovation against the
//! EKF prediction with ECDQ and send the coded index.
//!
//! Sensor order inside region i (10 channels): delays of drones 1..5, then
//! Dopplers of drones 1..5. Region i occupies sensors 10i..10i+9.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ccp::{CcpOptions, PerStepSolver};
use crate::ecdq::{code_innovation, decode_innovation, DitherStream, QuantizerConfig};
use crate::error::{invalid, Error, Result};
use crate::info_cost::{csv_err, sensor_mi_precision};
use crate::kalman;
use crate::linalg;
use crate::model::{GaussMarkovSystem, SourceProcess};
use crate::rng;

pub const STATE_PER_TARGET: usize = 4;
/// EKF divergence threshold on tr P and on the squared estimation error.
pub const DIVERGENCE_TRACE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneGains {
    pub kp: f64,
    pub kd: f64,
    pub lp: f64,
    pub ld: f64,
}

impl Default for DroneGains {
    fn default() -> Self {
        Self { kp: 0.05, kd: 0.4, lp: 0.01, ld: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneConfig {
    pub targets: usize,
    pub drones_per_target: usize,
    pub dt: f64,
    pub gains: DroneGains,
    /// Drones start on a ring of this radius around their target.
    pub ring_radius: f64,
    /// Targets start on a row at this height, spaced by `target_spacing`.
    pub target_row_y: f64,
    pub target_spacing: f64,
    /// Diagonal of FFᵀ for one target (p_x, p_y, v_x, v_y).
    pub process_noise: [f64; 4],
    /// Diagonal of the initial covariance for one target.
    pub initial_cov: [f64; 4],
    /// Initial drone speed tangent to the ring (counter-clockwise).
    pub swirl_speed: f64,
    /// Standard deviation of a per-drone random addition to the swirl speed.
    /// Velocities stay tangent, so no drone starts closing in on its target.
    pub drone_speed_spread: f64,
    /// Initial target speed; target i heads at angle 2πi/targets.
    pub initial_speed: f64,
    /// Start the EKF at the true state instead of a draw from the prior.
    pub perfect_initial_estimate: bool,
    pub beta: f64,
}

impl Default for DroneConfig {
    fn default() -> Self {
        Self {
            targets: 5,
            drones_per_target: 5,
            dt: 1.0,
            gains: DroneGains::default(),
            ring_radius: 50.0,
            target_row_y: 3000.0,
            target_spacing: 1500.0,
            process_noise: [10.0, 10.0, 1.0, 1.0],
            initial_cov: [10.0, 10.0, 1.0, 1.0],
            initial_speed: 5.0,
            swirl_speed: 0.0,
            drone_speed_spread: 20.0,
            perfect_initial_estimate: true,
            beta: 1.0,
        }
    }
}

impl DroneConfig {
    pub fn n(&self) -> usize {
        self.targets * STATE_PER_TARGET
    }

    pub fn sensors(&self) -> usize {
        2 * self.targets * self.drones_per_target
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets == 0 || self.drones_per_target == 0 {
            return Err(invalid("need at least one target and one drone per target"));
        }
        if !(self.dt > 0.0) || !(self.ring_radius > 0.0) || !(self.beta >= 0.0) {
            return Err(invalid("dt and ring radius must be positive, beta non-negative"));
        }
        if !(self.drone_speed_spread >= 0.0 && self.initial_speed.is_finite() && self.swirl_speed.is_finite()) {
            return Err(invalid("drone speed spread must be non-negative"));
        }
        if self.process_noise.iter().chain(&self.initial_cov).any(|v| !(*v >= 0.0)) {
            return Err(invalid("noise and covariance diagonals must be non-negative"));
        }
        Ok(())
    }

    /// Block-diagonal constant-velocity model for all targets.
    pub fn system(&self) -> Result<GaussMarkovSystem> {
        self.validate()?;
        let n = self.n();
        let mut a = DMatrix::identity(n, n);
        let mut f = DMatrix::zeros(n, n);
        let mut p0 = DMatrix::zeros(n, n);
        for i in 0..self.targets {
            let o = STATE_PER_TARGET * i;
            a[(o, o + 2)] = self.dt;
            a[(o + 1, o + 3)] = self.dt;
            for k in 0..4 {
                f[(o + k, o + k)] = self.process_noise[k].sqrt();
                p0[(o + k, o + k)] = self.initial_cov[k];
            }
        }
        GaussMarkovSystem::new(a, f, p0)
    }

    /// Mean initial target state.
    pub fn initial_mean(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n());
        let mid = (self.targets as f64 - 1.0) / 2.0;
        for i in 0..self.targets {
            let o = STATE_PER_TARGET * i;
            x[o] = (i as f64 - mid) * self.target_spacing;
            x[o + 1] = self.target_row_y;
            let heading = std::f64::consts::TAU * i as f64 / self.targets as f64;
            x[o + 2] = self.initial_speed * heading.cos();
            x[o + 3] = self.initial_speed * heading.sin();
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drone {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
}

fn target_pv(x: &DVector<f64>, i: usize) -> (Vector2<f64>, Vector2<f64>) {
    let o = STATE_PER_TARGET * i;
    (Vector2::new(x[o], x[o + 1]), Vector2::new(x[o + 2], x[o + 3]))
}

/// Bistatic delay |p| + |p − p_d| (base station at the origin).
pub fn delay(target_p: &Vector2<f64>, drone: &Drone) -> f64 {
    target_p.norm() + (target_p - drone.pos).norm()
}

/// Doppler (v·p)/|p| + ((v − v_d)·(p − p_d))/|p − p_d|.
pub fn doppler(target_p: &Vector2<f64>, target_v: &Vector2<f64>, drone: &Drone) -> f64 {
    let r = target_p - drone.pos;
    let u = target_v - drone.vel;
    target_v.dot(target_p) / target_p.norm() + u.dot(&r) / r.norm()
}

/// Gradient of the delay with respect to (p_x, p_y, v_x, v_y).
pub fn delay_jacobian(target_p: &Vector2<f64>, drone: &Drone) -> [f64; 4] {
    let r = target_p - drone.pos;
    let g = target_p / target_p.norm() + r / r.norm();
    [g.x, g.y, 0.0, 0.0]
}

/// Gradient of the Doppler with respect to (p_x, p_y, v_x, v_y).
pub fn doppler_jacobian(target_p: &Vector2<f64>, target_v: &Vector2<f64>, drone: &Drone) -> [f64; 4] {
    let p = target_p;
    let r = target_p - drone.pos;
    let u = target_v - drone.vel;
    let (np, nr) = (p.norm(), r.norm());
    let dp = target_v / np - p * (target_v.dot(p) / np.powi(3)) + u / nr - r * (u.dot(&r) / nr.powi(3));
    let dv = p / np + r / nr;
    [dp.x, dp.y, dv.x, dv.y]
}

#[derive(Debug, Clone)]
pub struct DroneWorld {
    pub cfg: DroneConfig,
    pub sys: GaussMarkovSystem,
    /// `drones[i][j]`: drone j around target i.
    pub drones: Vec<Vec<Drone>>,
}

impl DroneWorld {
    pub fn new(cfg: DroneConfig, seed: u64) -> Result<Self> {
        let sys = cfg.system()?;
        let x0 = cfg.initial_mean();
        let mut r = rng::substream(seed, rng::SCENARIO_STREAM);
        let spread = Normal::new(0.0, cfg.drone_speed_spread).map_err(|e| invalid(e.to_string()))?;
        let drones = (0..cfg.targets)
            .map(|i| {
                let (p, _) = target_pv(&x0, i);
                (0..cfg.drones_per_target)
                    .map(|j| {
                        let ang = std::f64::consts::TAU * j as f64 / cfg.drones_per_target as f64;
                        let speed = cfg.swirl_speed + spread.sample(&mut r);
                        let vel = Vector2::new(-ang.sin(), ang.cos()) * speed;
                        Drone { pos: p + Vector2::new(ang.cos(), ang.sin()) * cfg.ring_radius, vel }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { cfg, sys, drones })
    }

    fn region_of(&self, sensor: usize) -> (usize, usize, bool) {
        let per = 2 * self.cfg.drones_per_target;
        let (i, k) = (sensor / per, sensor % per);
        let is_delay = k < self.cfg.drones_per_target;
        (i, k % self.cfg.drones_per_target, is_delay)
    }

    /// All measurements h(x), in sensor order.
    pub fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.cfg.sensors(), |s, _| {
            let (i, j, is_delay) = self.region_of(s);
            let (p, v) = target_pv(x, i);
            let d = &self.drones[i][j];
            if is_delay {
                delay(&p, d)
            } else {
                doppler(&p, &v, d)
            }
        })
    }

    /// Measurement Jacobian at x (M × n, block structured by region).
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.cfg.sensors(), self.cfg.n());
        for s in 0..self.cfg.sensors() {
            let (i, j, is_delay) = self.region_of(s);
            let (p, v) = target_pv(x, i);
            let d = &self.drones[i][j];
            let row = if is_delay { delay_jacobian(&p, d) } else { doppler_jacobian(&p, &v, d) };
            for k in 0..4 {
                h[(s, STATE_PER_TARGET * i + k)] = row[k];
            }
        }
        h
    }

    /// PD step for every drone toward the estimated target state (semi-implicit Euler).
    pub fn steer(&mut self, x_est: &DVector<f64>) {
        let g = self.cfg.gains.clone();
        let dt = self.cfg.dt;
        for (i, region) in self.drones.iter_mut().enumerate() {
            let (pt, vt) = target_pv(x_est, i);
            let snapshot = region.clone();
            for (j, d) in region.iter_mut().enumerate() {
                let mut acc = (pt - d.pos) * g.kp + (vt - d.vel) * g.kd;
                for (k, other) in snapshot.iter().enumerate() {
                    if k != j {
                        acc -= (other.pos - d.pos) * g.lp + (other.vel - d.vel) * g.ld;
                    }
                }
                d.vel += acc * dt;
                d.pos += d.vel * dt;
            }
        }
    }
}

/// How measurements reach the fusion center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transport {
    /// Per-step allocation with ECDQ coding.
    Allocated,
    /// Every sensor sends with a fixed tiny noise variance, uncoded.
    FullRate { variance: f64 },
}

#[derive(Debug, Clone)]
pub struct DroneStep {
    pub t: usize,
    pub delta: DVector<f64>,
    pub flagged: bool,
    /// Gaussian-model tr P_filt.
    pub trace_p_filt: f64,
    /// ‖x − x̂_filt‖².
    pub sq_error: f64,
    pub mi_bits: DVector<f64>,
    pub empirical_bits: DVector<f64>,
    pub truth: DVector<f64>,
    pub estimate: DVector<f64>,
    pub drones: Vec<Vec<Drone>>,
    pub ccp_iterations: usize,
}

impl DroneStep {
    pub fn support(&self) -> Vec<bool> {
        self.delta.iter().map(|d| *d > 0.0).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DroneRun {
    pub cfg: DroneConfig,
    pub steps: Vec<DroneStep>,
}

pub fn drone_demo(cfg: &DroneConfig, steps: usize, seed: u64, transport: Transport, opts: &CcpOptions) -> Result<DroneRun> {
    let mut world = DroneWorld::new(cfg.clone(), seed)?;
    let sys = world.sys.clone();
    let m = cfg.sensors();
    let mean0 = cfg.initial_mean();
    let mut source = SourceProcess::new(&sys, seed);
    // Deterministic part of the trajectory; the source adds the random part.
    let mut offset = mean0.clone();
    let mut x_pred = if cfg.perfect_initial_estimate { &offset + source.state() } else { mean0.clone() };
    let mut p_pred = sys.p_init().clone();
    let mut solver = PerStepSolver::new(DVector::from_element(m, 1.0), cfg.beta, opts.clone());
    let dithers: Vec<DitherStream> = (0..m as u64).map(|i| DitherStream::new(i, seed)).collect();
    let mut out = Vec::with_capacity(steps);

    for t in 0..steps {
        let truth = &offset + source.state();
        let c_t = world.jacobian(&x_pred);
        let (delta, flagged, iterations) = match transport {
            Transport::Allocated => {
                let s = solver.solve_step(&sys, &c_t, &p_pred)?;
                (s.delta, s.flagged, s.iterations)
            }
            Transport::FullRate { variance } => (DVector::from_element(m, 1.0 / variance), false, 0),
        };
        let active: Vec<usize> = (0..m).filter(|&i| delta[i] > 0.0).collect();
        let y = world.measure(&truth);
        let h_pred = world.measure(&x_pred);
        let mut eta = DVector::zeros(active.len());
        let mut empirical = DVector::zeros(m);
        let mut mi = DVector::zeros(m);
        for (k, &i) in active.iter().enumerate() {
            let theta = y[i] - h_pred[i];
            let c_i = linalg::row_vec(&c_t, i);
            mi[i] = sensor_mi_precision(&p_pred, &c_i, delta[i]);
            match transport {
                Transport::Allocated => {
                    let cfg_q = QuantizerConfig::from_variance(1.0 / delta[i])?;
                    let xi = dithers[i].sample(t as u64, &cfg_q);
                    let sigma = linalg::quad_form(&p_pred, &c_i).max(0.0).sqrt();
                    let step = code_innovation(theta, sigma, &cfg_q, xi)?;
                    eta[k] = decode_innovation(&step.codeword, sigma, &cfg_q, xi)?;
                    empirical[i] = step.bits as f64;
                }
                Transport::FullRate { .. } => eta[k] = theta,
            }
        }
        let c_act = c_t.select_rows(&active);
        let v_act: Vec<f64> = active.iter().map(|&i| 1.0 / delta[i]).collect();
        let (p_filt, gain) = kalman::measurement_update(&p_pred, &c_act, &v_act)?;
        let x_filt = &x_pred + &gain * &eta;
        let trace = p_filt.trace();
        let err = (&truth - &x_filt).norm_squared();
        if !(trace <= DIVERGENCE_TRACE && err <= DIVERGENCE_TRACE) {
            return Err(Error::EkfDivergence { step: t + 1, trace: trace.max(err) });
        }
        out.push(DroneStep {
            t: t + 1,
            delta,
            flagged,
            trace_p_filt: trace,
            sq_error: err,
            mi_bits: mi,
            empirical_bits: empirical,
            truth,
            estimate: x_filt.clone(),
            drones: world.drones.clone(),
            ccp_iterations: iterations,
        });

        world.steer(&x_filt);
        source.advance();
        offset = sys.a() * offset;
        x_pred = sys.a() * x_filt;
        p_pred = kalman::time_update(&p_filt, &sys);
    }
    Ok(DroneRun { cfg: cfg.clone(), steps: out })
}

impl DroneRun {
    /// Distinct support patterns over the run.
    pub fn distinct_supports(&self) -> usize {
        let mut seen: Vec<Vec<bool>> = self.steps.iter().map(|s| s.support()).collect();
        seen.sort();
        seen.dedup();
        seen.len()
    }

    /// Columns: t, sensor, region, drone, channel, delta, active, mi_bits, empirical_bits, flagged.
    pub fn write_allocations_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "sensor", "region", "drone", "channel", "delta", "active", "mi_bits", "empirical_bits", "flagged"])
            .map_err(csv_err)?;
        let per = self.cfg.drones_per_target;
        for s in &self.steps {
            for i in 0..s.delta.len() {
                let (region, k) = (i / (2 * per), i % (2 * per));
                let channel = if k < per { "delay" } else { "doppler" };
                w.write_record([
                    s.t.to_string(),
                    (i + 1).to_string(),
                    (region + 1).to_string(),
                    (k % per + 1).to_string(),
                    channel.to_string(),
                    s.delta[i].to_string(),
                    u8::from(s.delta[i] > 0.0).to_string(),
                    s.mi_bits[i].to_string(),
                    s.empirical_bits[i].to_string(),
                    u8::from(s.flagged).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: t, kind (target/estimate/drone), region, drone, px, py, vx, vy.
    pub fn write_trajectories_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "kind", "region", "drone", "px", "py", "vx", "vy"]).map_err(csv_err)?;
        for s in &self.steps {
            for i in 0..self.cfg.targets {
                for (kind, x) in [("target", &s.truth), ("estimate", &s.estimate)] {
                    let (p, v) = target_pv(x, i);
                    w.write_record([s.t.to_string(), kind.into(), (i + 1).to_string(), String::new(), p.x.to_string(), p.y.to_string(), v.x.to_string(), v.y.to_string()])
                        .map_err(csv_err)?;
                }
                for (j, d) in s.drones[i].iter().enumerate() {
                    w.write_record([
                        s.t.to_string(),
                        "drone".into(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        d.pos.x.to_string(),
                        d.pos.y.to_string(),
                        d.vel.x.to_string(),
                        d.vel.y.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: t, mse_empirical (‖x − x̂‖²), trace_p_filt, flagged.
    pub fn write_mse_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mse_empirical", "trace_p_filt", "flagged"]).map_err(csv_err)?;
        for s in &self.steps {
            w.write_record([s.t.to_string(), s.sq_error.to_string(), s.trace_p_filt.to_string(), u8::from(s.flagged).to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
