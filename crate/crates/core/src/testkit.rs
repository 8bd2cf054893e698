//! Small random instances shared by unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{GaussMarkovSystem, SensorBank};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable A (spectral radius ≤ 0.9), full-rank F, P_init = I, random C and α.
pub fn random_instance(seed: u64, n: usize, m_sensors: usize) -> (GaussMarkovSystem, SensorBank) {
    let mut r = rng(seed);
    let raw = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let rho = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-9);
    let a = raw * (r.gen_range(0.3..0.9) / rho);
    let f = DMatrix::from_fn(n, n, |i, j| if i == j { r.gen_range(0.5..1.5) } else { r.gen_range(-0.2..0.2) });
    let sys = GaussMarkovSystem::new(a, f, DMatrix::identity(n, n)).unwrap();
    let c = DMatrix::from_fn(m_sensors, n, |_, _| r.gen_range(-1.0..1.0));
    let alpha = DVector::from_fn(m_sensors, |_, _| r.gen_range(0.5..2.0));
    (sys, SensorBank::new(c, alpha).unwrap())
}

pub fn positive_table(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| (r.gen_range(lo.ln()..hi.ln()) as f64).exp())
}
