//! End-to-end sensor network over a linear Gauss-Markov source.
//!
//! Each active sensor codes its innovation against the fusion center's
//! prediction with ECDQ; the fusion center decodes, runs the Kalman filter
//! with V_i = 1/δ_i and the next prediction is fed back to the sensors.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dc_program::Allocation;
use crate::ecdq::{decode_innovation, innovation_codec_step, sandwich_gap_bits, DitherStream, QuantizerConfig, CODE_ALLOWANCE_BITS};
use crate::error::{invalid, Result};
use crate::info_cost::{csv_err, sensor_mi_precision, RateReport};
use crate::kalman::{lmmse_step, FilterState};
use crate::linalg;
use crate::model::{GaussMarkovSystem, SensorBank, SourceProcess};

#[derive(Debug, Clone)]
pub struct NetworkRun {
    /// ‖x_t − x̂_{t|t}‖² per step.
    pub sq_error: Vec<f64>,
    /// Gaussian-model tr P_{t|t} per step.
    pub trace_p_filt: Vec<f64>,
    /// steps × M, bits per step.
    pub mi_bits: DMatrix<f64>,
    /// steps × M, measured codeword lengths.
    pub lengths: DMatrix<f64>,
}

/// Runs `steps` steps; allocation row t drives step t, the last row repeating.
pub fn simulate_network(sys: &GaussMarkovSystem, bank: &SensorBank, allocation: &Allocation, steps: usize, seed: u64) -> Result<NetworkRun> {
    bank.check_dims(sys)?;
    if allocation.sensors() != bank.len() {
        return Err(invalid(format!("allocation has {} sensors, bank has {}", allocation.sensors(), bank.len())));
    }
    if steps == 0 {
        return Err(invalid("simulation needs at least one step"));
    }
    let m = bank.len();
    let mut source = SourceProcess::new(sys, seed);
    let mut filter = FilterState::new(DVector::zeros(sys.n()), sys.p_init().clone());
    let dithers: Vec<DitherStream> = (0..m as u64).map(|i| DitherStream::new(i, seed)).collect();
    let mut run = NetworkRun {
        sq_error: Vec::with_capacity(steps),
        trace_p_filt: Vec::with_capacity(steps),
        mi_bits: DMatrix::zeros(steps, m),
        lengths: DMatrix::zeros(steps, m),
    };
    for t in 0..steps {
        let row = allocation.row_for_step(t);
        let active = allocation.active(row);
        let x = source.state();
        let p_pred = &filter.riccati.p_pred;
        let mut eta = Vec::with_capacity(active.len());
        let mut v = Vec::with_capacity(active.len());
        for &i in &active {
            let c_i = bank.row(i);
            let delta = allocation.delta(row, i);
            let cfg = QuantizerConfig::from_variance(1.0 / delta)?;
            let xi = dithers[i].sample(t as u64, &cfg);
            let y = c_i.dot(x);
            let sent = innovation_codec_step(y, &filter.x_pred, &c_i, p_pred, &cfg, xi)?;
            let sigma = linalg::quad_form(p_pred, &c_i).max(0.0).sqrt();
            let theta_hat = decode_innovation(&sent.codeword, sigma, &cfg, xi)?;
            eta.push(c_i.dot(&filter.x_pred) + theta_hat);
            v.push(1.0 / delta);
            run.mi_bits[(t, i)] = sensor_mi_precision(p_pred, &c_i, delta);
            run.lengths[(t, i)] = sent.bits as f64;
        }
        let c_act = bank.c().select_rows(&active);
        filter = lmmse_step(&filter, sys, &c_act, &v, &eta)?;
        run.sq_error.push((x - &filter.x_filt).norm_squared());
        run.trace_p_filt.push(filter.riccati.p_filt.trace());
        source.advance();
    }
    Ok(run)
}

/// Mean and standard error of a stationary series by non-overlapping batch means.
pub fn batch_mean(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let b = batches.clamp(2, n.max(2));
    let size = n / b;
    if size == 0 {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = (0..b).map(|k| series[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let mm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - mm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Per-sensor averages of one run, against the rate sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRateSummary {
    pub sensor: usize,
    pub mi_bits: f64,
    pub empirical_bits: f64,
    pub empirical_std_err: f64,
    pub upper_bits: f64,
}

impl SensorRateSummary {
    pub fn within_sandwich(&self) -> bool {
        self.empirical_bits >= self.mi_bits - 3.0 * self.empirical_std_err && self.empirical_bits <= self.upper_bits
    }
}

impl NetworkRun {
    pub fn steps(&self) -> usize {
        self.sq_error.len()
    }

    pub fn mean_sq_error(&self) -> f64 {
        self.sq_error.iter().sum::<f64>() / self.steps() as f64
    }

    pub fn mean_trace(&self) -> f64 {
        self.trace_p_filt.iter().sum::<f64>() / self.steps() as f64
    }

    pub fn rate_summary(&self) -> Vec<SensorRateSummary> {
        let n = self.steps();
        (0..self.lengths.ncols())
            .map(|i| {
                let lengths: Vec<f64> = self.lengths.column(i).iter().copied().collect();
                let (empirical, se) = batch_mean(&lengths, 50.min(n));
                let mi = self.mi_bits.column(i).sum() / n as f64;
                let upper = if mi > 0.0 { mi + sandwich_gap_bits() + CODE_ALLOWANCE_BITS } else { 0.0 };
                SensorRateSummary { sensor: i, mi_bits: mi, empirical_bits: empirical, empirical_std_err: se, upper_bits: upper }
            })
            .collect()
    }

    pub fn rate_report(&self, alpha: &DVector<f64>) -> Result<RateReport> {
        RateReport::new(self.mi_bits.clone(), alpha)?.with_empirical(self.lengths.clone())
    }

    /// Columns: t, mse_empirical, trace_p_filt.
    pub fn write_mse_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mse_empirical", "trace_p_filt"]).map_err(csv_err)?;
        for t in 0..self.steps() {
            w.write_record([(t + 1).to_string(), self.sq_error[t].to_string(), self.trace_p_filt[t].to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: sensor, mi_bits, empirical_bits, std_err, upper_bits, within.
    pub fn write_empirical_rates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sensor", "mi_bits", "empirical_bits", "std_err", "upper_bits", "within"]).map_err(csv_err)?;
        for s in self.rate_summary() {
            w.write_record([
                (s.sensor + 1).to_string(),
                s.mi_bits.to_string(),
                s.empirical_bits.to_string(),
                s.empirical_std_err.to_string(),
                s.upper_bits.to_string(),
                u8::from(s.within_sandwich()).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::steady_state_riccati;

    fn scalar_setup(v: f64) -> (GaussMarkovSystem, SensorBank, Allocation) {
        let sys = GaussMarkovSystem::scalar(0.9, 1.0, 1.0).unwrap();
        let bank = SensorBank::identity(1).unwrap();
        let alloc = Allocation::from_delta(DMatrix::from_element(1, 1, 1.0 / v)).unwrap();
        (sys, bank, alloc)
    }

    #[test]
    fn silent_network_is_open_loop() {
        let (sys, bank, _) = scalar_setup(1.0);
        let alloc = Allocation::zeros(1, 1);
        let run = simulate_network(&sys, &bank, &alloc, 50, 3).unwrap();
        assert!(run.lengths.iter().all(|l| *l == 0.0));
        // P_t = a² P_{t-1} + 1 from P_1 = 1
        let mut p = 1.0;
        for t in 0..50 {
            assert!((run.trace_p_filt[t] - p).abs() < 1e-12);
            p = 0.81 * p + 1.0;
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let (sys, bank, alloc) = scalar_setup(0.5);
        let a = simulate_network(&sys, &bank, &alloc, 200, 11).unwrap();
        let b = simulate_network(&sys, &bank, &alloc, 200, 11).unwrap();
        assert_eq!(a.sq_error, b.sq_error);
        assert_eq!(a.lengths, b.lengths);
    }

    #[test]
    fn scalar_mse_matches_riccati() {
        let v = 2.0;
        let (sys, bank, alloc) = scalar_setup(v);
        let run = simulate_network(&sys, &bank, &alloc, 20_000, 5).unwrap();
        let ss = steady_state_riccati(&sys, &bank.c().clone(), &[v]).unwrap();
        let tail = &run.sq_error[100..];
        let (mean, se) = batch_mean(tail, 100);
        assert!((mean - ss.p_filt[(0, 0)]).abs() < 3.0 * se, "mean {mean} se {se} vs {}", ss.p_filt[(0, 0)]);
        for s in run.rate_summary() {
            assert!(s.within_sandwich(), "{s:?}");
        }
    }

    #[test]
    fn batch_mean_of_constant() {
        let (m, se) = batch_mean(&[2.0; 100], 10);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
