//! Gaussian-model information costs, in bits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::ecdq::sandwich_gap_bits;
use crate::error::{invalid, Result};
use crate::linalg;

/// ½ log2(1 + C_i P C_iᵀ / V_i): information carried by one sensor at noise variance `v`.
pub fn sensor_mi(p_pred: &DMatrix<f64>, c_i: &DVector<f64>, v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(invalid(format!("noise variance must be positive, got {v}")));
    }
    if v.is_infinite() {
        return Ok(0.0);
    }
    let s = linalg::quad_form(p_pred, c_i).max(0.0);
    Ok(0.5 * (s / v).ln_1p() / std::f64::consts::LN_2)
}

/// Same quantity from the precision δ = 1/V; δ = 0 means the sensor is silent.
pub fn sensor_mi_precision(p_pred: &DMatrix<f64>, c_i: &DVector<f64>, delta: f64) -> f64 {
    let s = linalg::quad_form(p_pred, c_i).max(0.0);
    0.5 * (delta.max(0.0) * s).ln_1p() / std::f64::consts::LN_2
}

/// (1/T) Σ_t Σ_i α_i MI[t, i].
pub fn horizon_cost(mi: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<f64> {
    if mi.ncols() != alpha.len() {
        return Err(invalid(format!("MI table has {} sensors but {} weights were given", mi.ncols(), alpha.len())));
    }
    if mi.nrows() == 0 {
        return Err(invalid("MI table has no time steps"));
    }
    Ok((mi * alpha).sum() / mi.nrows() as f64)
}

/// Shannon capacity B log2(1 + SNR) in bits/s.
pub fn capacity(bandwidth: f64, snr: f64) -> f64 {
    bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Received SNR L P_tx / (r² B N0).
pub fn link_snr(path_gain: f64, tx_power: f64, range: f64, bandwidth: f64, noise_density: f64) -> f64 {
    path_gain * tx_power / (range * range * bandwidth * noise_density)
}

/// Airtime weights α_i = 1 / capacity_i (seconds per bit).
pub fn airtime_weights(capacities: &[f64]) -> Result<DVector<f64>> {
    if let Some(c) = capacities.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(invalid(format!("capacity must be positive and finite, got {c}")));
    }
    Ok(DVector::from_iterator(capacities.len(), capacities.iter().map(|c| 1.0 / c)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// T x M, bits per step.
    pub per_sensor_mi: DMatrix<f64>,
    pub weighted_total: f64,
    pub sandwich_upper: f64,
    /// T x M measured codeword lengths, when a simulation was run.
    pub empirical_lengths: Option<DMatrix<f64>>,
}

impl RateReport {
    pub fn new(per_sensor_mi: DMatrix<f64>, alpha: &DVector<f64>) -> Result<Self> {
        if per_sensor_mi.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("mutual information entries must be non-negative"));
        }
        let weighted_total = horizon_cost(&per_sensor_mi, alpha)?;
        let sandwich_upper = weighted_total + sandwich_gap_bits() * alpha.sum();
        Ok(Self { per_sensor_mi, weighted_total, sandwich_upper, empirical_lengths: None })
    }

    pub fn with_empirical(mut self, lengths: DMatrix<f64>) -> Result<Self> {
        if lengths.shape() != self.per_sensor_mi.shape() {
            return Err(invalid("empirical length table must match the MI table"));
        }
        self.empirical_lengths = Some(lengths);
        Ok(self)
    }

    /// CSV with columns t, sensor, mi_bits, empirical_bits (1-based indices).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "sensor", "mi_bits", "empirical_bits"]).map_err(csv_err)?;
        for t in 0..self.per_sensor_mi.nrows() {
            for i in 0..self.per_sensor_mi.ncols() {
                let emp = self.empirical_lengths.as_ref().map(|e| e[(t, i)].to_string()).unwrap_or_default();
                w.write_record([(t + 1).to_string(), (i + 1).to_string(), self.per_sensor_mi[(t, i)].to_string(), emp])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::error::Error::Io(io),
        other => crate::error::Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mi_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let c = DVector::from_element(1, 1.0);
        assert_relative_eq!(sensor_mi(&one, &c, 1.0).unwrap(), 0.5);
        assert!(sensor_mi(&one, &c, 1e12).unwrap() < 1e-12);
        assert_eq!(sensor_mi(&one, &c, f64::INFINITY).unwrap(), 0.0);
        assert!(sensor_mi(&one, &c, 0.0).is_err());
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(sensor_mi(&p, &c, 2.0).unwrap(), 0.5 * 3.5f64.log2(), epsilon = 1e-15);
        assert_relative_eq!(sensor_mi(&p, &c, 2.0).unwrap(), 0.9037, epsilon = 1e-4);
    }

    #[test]
    fn cost_examples() {
        let alpha = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(horizon_cost(&DMatrix::zeros(3, 2), &alpha).unwrap(), 0.0);
        let mi = DMatrix::from_row_slice(1, 2, &[0.5, 1.0]);
        assert_relative_eq!(horizon_cost(&mi, &alpha).unwrap(), 2.5);
        assert!(horizon_cost(&mi, &DVector::from_element(3, 1.0)).is_err());
    }

    #[test]
    fn airtime_examples() {
        let c = capacity(1e6, 3.0);
        assert_relative_eq!(c, 2e6);
        assert_relative_eq!(airtime_weights(&[c]).unwrap()[0], 5e-7);
        let near = link_snr(1.0, 1.0, 10.0, 1e6, 1e-12);
        let far = link_snr(1.0, 1.0, 20.0, 1e6, 1e-12);
        assert_relative_eq!(far, near / 4.0);
        let w = airtime_weights(&[capacity(1e6, near), capacity(1e6, far), capacity(1e6, near)]).unwrap();
        assert_eq!(w[0], w[2]);
        assert_relative_eq!(w[1] / w[0], (1.0 + near).log2() / (1.0 + far).log2(), max_relative = 1e-12);
        assert!(airtime_weights(&[0.0]).is_err());
    }

    #[test]
    fn report_totals_and_csv() {
        let mi = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let alpha = DVector::from_vec(vec![1.0, 2.0]);
        let r = RateReport::new(mi, &alpha).unwrap();
        assert_relative_eq!(r.weighted_total, (2.5 + 1.0) / 2.0);
        assert_relative_eq!(r.sandwich_upper, 1.75 + 3.0 * sandwich_gap_bits());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,sensor,mi_bits,empirical_bits\n1,1,0.5,\n"));
        assert!(RateReport::new(DMatrix::from_element(1, 1, -0.1), &DVector::from_element(1, 1.0)).is_err());
    }
}
