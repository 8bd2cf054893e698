//! Gauss-Markov source, sensor bank and trajectory simulation.
//!
//! The source evolves as `x[t+1] = A x[t] + F w[t]` with `w[t] ~ N(0, I)` and
//! `x[1] ~ N(0, P_init)`. Sensors are noiseless scalar projections `y_i = C_i x`.

use nalgebra::{DMatrix, DVector, SVD};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::rng;

const PSD_TOL: f64 = 1e-9;
/// Relative singular-value threshold for numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussMarkovSystem {
    a: DMatrix<f64>,
    f: DMatrix<f64>,
    p_init: DMatrix<f64>,
}

impl GaussMarkovSystem {
    pub fn new(a: DMatrix<f64>, f: DMatrix<f64>, p_init: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(invalid(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if f.nrows() != n || f.ncols() == 0 {
            return Err(invalid(format!("F must be {n}xm with m >= 1, got {}x{}", f.nrows(), f.ncols())));
        }
        if p_init.nrows() != n || p_init.ncols() != n {
            return Err(invalid("P_init must be n x n"));
        }
        if a.iter().chain(f.iter()).chain(p_init.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("system matrices must be finite"));
        }
        if linalg::max_abs(&(&p_init - p_init.transpose())) > PSD_TOL * linalg::max_abs(&p_init).max(1.0) {
            return Err(invalid("P_init must be symmetric"));
        }
        if !linalg::is_psd(&p_init, PSD_TOL) {
            return Err(invalid("P_init must be positive semidefinite"));
        }
        let p_init = linalg::symmetrize(&p_init);
        Ok(Self { a, f, p_init })
    }

    pub fn scalar(a: f64, f: f64, p_init: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, f),
            DMatrix::from_element(1, 1, p_init),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn p_init(&self) -> &DMatrix<f64> {
        &self.p_init
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.f.ncols()
    }

    /// Process noise covariance F F^T.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        &self.f * self.f.transpose()
    }

    pub fn with_p_init(&self, p_init: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.f.clone(), p_init)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBank {
    c: DMatrix<f64>,
    alpha: DVector<f64>,
    labels: Vec<String>,
}

impl SensorBank {
    pub fn new(c: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let labels = (0..c.nrows()).map(|i| format!("s{}", i + 1)).collect();
        Self::with_labels(c, alpha, labels)
    }

    pub fn with_labels(c: DMatrix<f64>, alpha: DVector<f64>, labels: Vec<String>) -> Result<Self> {
        let m = c.nrows();
        if m == 0 {
            return Err(invalid("sensor bank must contain at least one sensor"));
        }
        if alpha.len() != m || labels.len() != m {
            return Err(invalid(format!("expected {m} weights and labels, got {} and {}", alpha.len(), labels.len())));
        }
        if let Some(i) = alpha.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid(format!("weight alpha[{i}] = {} must be positive", alpha[i])));
        }
        for i in 0..m {
            let row = c.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("sensor row {i} is not finite")));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(invalid(format!("sensor row {i} is identically zero")));
            }
        }
        Ok(Self { c, alpha, labels })
    }

    /// Every state measured directly, unit weights.
    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n), DVector::from_element(n, 1.0))
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn len(&self) -> usize {
        self.c.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }
    pub fn n(&self) -> usize {
        self.c.ncols()
    }
    pub fn row(&self, i: usize) -> DVector<f64> {
        linalg::row_vec(&self.c, i)
    }

    /// Bank restricted to the given sensor indices, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let c = self.c.select_rows(idx);
        let alpha = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.alpha[i]));
        let labels = idx.iter().map(|&i| self.labels[i].clone()).collect();
        Self::with_labels(c, alpha, labels)
    }

    pub fn with_alpha(&self, alpha: DVector<f64>) -> Result<Self> {
        Self::with_labels(self.c.clone(), alpha, self.labels.clone())
    }

    pub fn check_dims(&self, sys: &GaussMarkovSystem) -> Result<()> {
        if self.n() != sys.n() {
            return Err(invalid(format!("sensor rows have {} columns but the state has dimension {}", self.n(), sys.n())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// T x n, row t is x_{t+1}.
    pub states: DMatrix<f64>,
    /// T x M, row t is C x_{t+1}.
    pub measurements: DMatrix<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
    pub fn state(&self, t: usize) -> DVector<f64> {
        linalg::row_vec(&self.states, t)
    }
}

/// How the heat-diffusion transition matrix is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeatVariant {
    /// A = (a/h^2) tridiag(-1, 2, -1), literally.
    #[default]
    AsPrinted,
    /// A = I - (a dt/h^2) tridiag(-1, 2, -1), an explicit Euler step.
    IdentityMinusLaplacian,
}

/// Heat rod with unit process noise per node and identity prior.
pub fn build_heat_system(nodes: usize, diffusivity: f64, segment_length: f64) -> Result<GaussMarkovSystem> {
    build_heat_system_variant(nodes, diffusivity, segment_length, HeatVariant::AsPrinted, 1.0)
}

pub fn build_heat_system_variant(
    nodes: usize,
    diffusivity: f64,
    segment_length: f64,
    variant: HeatVariant,
    time_step: f64,
) -> Result<GaussMarkovSystem> {
    if nodes < 2 {
        return Err(invalid(format!("heat rod needs at least 2 nodes, got {nodes}")));
    }
    if !(diffusivity > 0.0) || !(segment_length > 0.0) || !(time_step > 0.0) {
        return Err(invalid("diffusivity, segment length and time step must be positive"));
    }
    let mut lap = DMatrix::zeros(nodes, nodes);
    for i in 0..nodes {
        lap[(i, i)] = 2.0;
        if i + 1 < nodes {
            lap[(i, i + 1)] = -1.0;
            lap[(i + 1, i)] = -1.0;
        }
    }
    let k = diffusivity / (segment_length * segment_length);
    let a = match variant {
        HeatVariant::AsPrinted => lap * k,
        HeatVariant::IdentityMinusLaplacian => DMatrix::identity(nodes, nodes) - lap * (k * time_step),
    };
    GaussMarkovSystem::new(a, DMatrix::identity(nodes, nodes), DMatrix::identity(nodes, nodes))
}

/// True iff [C; CA; ...; CA^{n-1}] has numerical rank n.
pub fn check_observability(sys: &GaussMarkovSystem, bank: &SensorBank) -> bool {
    check_observability_pair(sys.a(), bank.c())
}

pub fn check_observability_pair(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let m = c.nrows();
    if c.ncols() != n || m == 0 {
        return false;
    }
    let mut obs = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    // scale rows so tiny powers of a contracting A do not masquerade as rank loss
    for r in 0..obs.nrows() {
        let norm = obs.row(r).norm();
        if norm > 0.0 {
            obs.row_mut(r).scale_mut(1.0 / norm);
        }
    }
    let sv = SVD::new(obs, false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return false;
    }
    let rank = sv.iter().filter(|&&s| s / smax > RANK_THRESHOLD).count();
    rank == n
}

fn standard_normal_vec(rng: &mut impl rand::Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}

/// Draws a trajectory of `horizon` steps from the source and measures it with `bank`.
pub fn simulate_source(sys: &GaussMarkovSystem, bank: &SensorBank, horizon: usize, seed: u64) -> Result<Trajectory> {
    bank.check_dims(sys)?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let n = sys.n();
    let mut rng = rng::substream(seed, rng::SOURCE_STREAM);
    let root = linalg::psd_sqrt(sys.p_init());
    let mut x = &root * standard_normal_vec(&mut rng, n);
    let mut states = DMatrix::zeros(horizon, n);
    for t in 0..horizon {
        states.row_mut(t).copy_from(&x.transpose());
        if t + 1 < horizon {
            let w = standard_normal_vec(&mut rng, sys.m());
            x = sys.a() * &x + sys.f() * w;
        }
    }
    let measurements = &states * bank.c().transpose();
    Ok(Trajectory { states, measurements, seed })
}

/// Streaming version of the source for long simulations that should not hold the whole path.
pub struct SourceProcess<'a> {
    sys: &'a GaussMarkovSystem,
    rng: rand_chacha::ChaCha20Rng,
    state: DVector<f64>,
}

impl<'a> SourceProcess<'a> {
    pub fn new(sys: &'a GaussMarkovSystem, seed: u64) -> Self {
        let mut rng = rng::substream(seed, rng::SOURCE_STREAM);
        let root = linalg::psd_sqrt(sys.p_init());
        let state = &root * standard_normal_vec(&mut rng, sys.n());
        Self { sys, rng, state }
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn advance(&mut self) {
        let w = standard_normal_vec(&mut self.rng, self.sys.m());
        self.state = self.sys.a() * &self.state + self.sys.f() * w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn heat_diagonal_matches_formula() {
        let sys = build_heat_system(60, 7.5e-7, 0.2459).unwrap();
        let diag = 2.0 * 7.5e-7 / (0.2459f64 * 0.2459);
        // 1.5e-6 / 0.06046681
        assert_relative_eq!(diag, 2.48070e-5, max_relative = 1e-5);
        for i in 0..60 {
            assert_eq!(sys.a()[(i, i)], diag);
            for j in 0..60 {
                assert_eq!(sys.a()[(i, j)], sys.a()[(j, i)]);
                if (i as i64 - j as i64).abs() > 1 {
                    assert_eq!(sys.a()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn heat_small_and_degenerate() {
        let sys = build_heat_system(2, 1.0, 1.0).unwrap();
        assert_eq!(sys.a(), &DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert!(build_heat_system(1, 1.0, 1.0).is_err());
        assert!(build_heat_system(3, 0.0, 1.0).is_err());
        assert!(build_heat_system(3, 1.0, -1.0).is_err());
    }

    #[test]
    fn heat_variant_is_euler_step() {
        let sys = build_heat_system_variant(3, 1.0, 1.0, HeatVariant::IdentityMinusLaplacian, 0.1).unwrap();
        assert_relative_eq!(sys.a()[(0, 0)], 0.8);
        assert_relative_eq!(sys.a()[(0, 1)], 0.1);
    }

    #[test]
    fn observability_examples() {
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!check_observability_pair(&DMatrix::identity(2, 2), &c));
        let chain = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(check_observability_pair(&chain, &c));
        let sys = build_heat_system(60, 7.5e-7, 0.2459).unwrap();
        assert!(check_observability(&sys, &SensorBank::identity(60).unwrap()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(SensorBank::new(c, DVector::from_element(2, 1.0)).is_err());
        let c = DMatrix::identity(2, 2);
        assert!(SensorBank::new(c, DVector::from_vec(vec![1.0, -1.0])).is_err());
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GaussMarkovSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), p).is_err());
    }

    #[test]
    fn noiseless_source_stays_at_zero() {
        let sys = GaussMarkovSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let traj = simulate_source(&sys, &SensorBank::identity(2).unwrap(), 20, 3).unwrap();
        assert!(traj.states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_path() {
        let sys = build_heat_system(4, 1e-3, 0.5).unwrap();
        let bank = SensorBank::identity(4).unwrap();
        let a = simulate_source(&sys, &bank, 50, 11).unwrap();
        let b = simulate_source(&sys, &bank, 50, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.measurements, &a.states * bank.c().transpose());
        let c = simulate_source(&sys, &bank, 50, 12).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn memoryless_source_has_identity_covariance() {
        let n = 3;
        let sys = GaussMarkovSystem::new(DMatrix::zeros(n, n), DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap();
        let traj = simulate_source(&sys, &SensorBank::identity(n).unwrap(), 100_001, 5).unwrap();
        let x = traj.states.rows(1, 100_000);
        let cov = x.transpose() * x / 100_000.0;
        let err = (cov - DMatrix::<f64>::identity(n, n)).norm() / (n as f64).sqrt();
        assert!(err < 0.05, "relative Frobenius error {err}");
    }

    #[test]
    fn stable_scalar_reaches_geometric_variance() {
        let sys = GaussMarkovSystem::scalar(0.9, 1.0, 1.0 / (1.0 - 0.81)).unwrap();
        let mut src = SourceProcess::new(&sys, 9);
        let mut acc = 0.0;
        let steps = 1_000_000;
        for _ in 0..steps {
            acc += src.state()[0] * src.state()[0];
            src.advance();
        }
        let var = acc / steps as f64;
        assert_relative_eq!(var, 5.2632, max_relative = 0.02);
    }
}
