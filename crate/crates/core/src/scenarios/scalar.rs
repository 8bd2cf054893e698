//! Scalar source `x' = a x + f w` seen by one noiseless sensor.
//!
//! The stationary filtered variance P ranges over [0, f²/(1−a²)] as the
//! quantization noise V ranges over [0, ∞], so the optimum puts P on the
//! budget unless the budget exceeds the open-loop variance.

use nalgebra::{DMatrix, DVector};

use crate::dc_program::DCProgram;
use crate::error::{invalid, Error, Result};
use crate::model::{GaussMarkovSystem, SensorBank};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    /// Stationary filtered variance min{β, f²/(1−a²)}.
    pub p_star: f64,
    /// log₂(a² + f²/P*): twice the sensor rate in bits per step; 0 when silent.
    pub value: f64,
    /// Quantization noise variance achieving P*; infinite when the sensor is silent.
    pub v_star: f64,
}

impl ScalarOptimum {
    /// Optimal rate ½ log₂(a² + f²/P*) in bits per step.
    pub fn rate_bits(&self) -> f64 {
        0.5 * self.value
    }
}

pub fn scalar_oracle(a: f64, f: f64, beta: f64) -> Result<ScalarOptimum> {
    if !(a.abs() < 1.0) {
        return Err(Error::UnsupportedDomain(format!("|a| must be below 1 for a bounded stationary variance, got {a}")));
    }
    if f == 0.0 || !f.is_finite() {
        return Err(invalid("f must be finite and non-zero"));
    }
    if !(beta > 0.0) {
        return Err(invalid(format!("budget must be positive, got {beta}")));
    }
    let open = f * f / (1.0 - a * a);
    if beta >= open {
        return Ok(ScalarOptimum { p_star: open, value: 0.0, v_star: f64::INFINITY });
    }
    let p = beta;
    let v = 1.0 / (1.0 / p - 1.0 / (a * a * p + f * f));
    Ok(ScalarOptimum { p_star: p, value: (a * a + f * f / p).log2(), v_star: v })
}

/// Infinite-horizon program for the scalar system with a unit-weight sensor.
pub fn scalar_program(a: f64, f: f64, beta: f64) -> Result<DCProgram> {
    let sys = GaussMarkovSystem::scalar(a, f, 1.0)?;
    let bank = SensorBank::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0))?;
    DCProgram::assemble_infinite(&sys, &bank, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_examples() {
        let o = scalar_oracle(0.9, 1.0, 2.0).unwrap();
        assert_eq!(o.p_star, 2.0);
        assert_relative_eq!(o.value, 1.31f64.log2(), max_relative = 1e-14);
        assert_relative_eq!(o.value, 0.3896, epsilon = 1e-4);
        assert_relative_eq!(o.v_star, 8.4516, epsilon = 1e-4);
        let cap = scalar_oracle(0.9, 1.0, 6.0).unwrap();
        assert_relative_eq!(cap.p_star, 5.2632, epsilon = 1e-4);
        assert_eq!(cap.value, 0.0);
        assert_eq!(cap.v_star, f64::INFINITY);
        assert!(scalar_oracle(0.9, 1.0, 1e-12).unwrap().value > 30.0);
        assert!(matches!(scalar_oracle(1.0, 1.0, 1.0), Err(Error::UnsupportedDomain(_))));
    }

    #[test]
    fn v_star_reproduces_p_star() {
        let o = scalar_oracle(-0.6, 0.7, 0.3).unwrap();
        let p = o.p_star;
        assert_relative_eq!(1.0 / p, 1.0 / (0.36 * p + 0.49) + 1.0 / o.v_star, max_relative = 1e-12);
    }
}
