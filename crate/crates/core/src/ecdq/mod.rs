//! Entropy-coded dithered quantization (ECDQ).
//!
//! A sensor adds shared dither ξ ~ U[-Δ/2, Δ/2) to its innovation, rounds to
//! the grid ΔZ, entropy-codes the index and the fusion center reconstructs
//! η = kΔ − ξ. The reconstruction error η − θ is uniform on [-Δ/2, Δ/2) and
//! independent of θ, so the link behaves like additive noise of variance Δ²/12.

pub mod bits;
pub mod codec;
pub mod framing;

pub use bits::{BitReader, BitWriter, Codeword};
pub use codec::{decode, encode, CodeBook, GaussianModel};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::rng;

/// Slack of the ECDQ rate bound over the Gaussian mutual information:
/// 1 + ½ log2(2πe/12) ≈ 1.254 bits.
pub fn sandwich_gap_bits() -> f64 {
    1.0 + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E / 12.0).log2()
}

/// Coder redundancy allowed on top of the sandwich gap in empirical checks.
pub const CODE_ALLOWANCE_BITS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    delta: f64,
}

impl QuantizerConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid(format!("quantizer step must be positive and finite, got {delta}")));
        }
        Ok(Self { delta })
    }

    /// Step whose uniform noise has variance `v`: Δ = √(12 v).
    pub fn from_variance(v: f64) -> Result<Self> {
        Self::new((12.0 * v).sqrt())
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn noise_variance(&self) -> f64 {
        self.delta * self.delta / 12.0
    }
}

/// Index of the cell [(k−½)Δ, (k+½)Δ) containing z + ξ.
pub fn quantize(z: f64, cfg: &QuantizerConfig, xi: f64) -> i64 {
    ((z + xi) / cfg.delta + 0.5).floor() as i64
}

pub fn reconstruct(k: i64, cfg: &QuantizerConfig, xi: f64) -> f64 {
    k as f64 * cfg.delta - xi
}

/// Per-sensor dither, reproducible at both ends of the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DitherStream {
    pub sensor_id: u64,
    pub base_seed: u64,
}

impl DitherStream {
    pub fn new(sensor_id: u64, base_seed: u64) -> Self {
        Self { sensor_id, base_seed }
    }

    /// ξ for step `t`, uniform on [-Δ/2, Δ/2).
    pub fn sample(&self, t: u64, cfg: &QuantizerConfig) -> f64 {
        let u = rng::uniform_at(self.base_seed, rng::DITHER_STREAM_BASE + self.sensor_id, t);
        (u - 0.5) * cfg.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecStep {
    pub codeword: Codeword,
    pub index: i64,
    /// Reconstruction of the innovation.
    pub eta: f64,
    pub bits: usize,
}

/// Quantize and code an innovation `theta` whose predictive std is `sigma`.
pub fn code_innovation(theta: f64, sigma: f64, cfg: &QuantizerConfig, xi: f64) -> Result<CodecStep> {
    let model = GaussianModel::new(sigma, cfg.delta, xi)?;
    let index = quantize(theta, cfg, xi);
    let codeword = encode(index, &model);
    let bits = codeword.len();
    Ok(CodecStep { codeword, index, eta: reconstruct(index, cfg, xi), bits })
}

/// Fusion-center side: recover the innovation reconstruction from a codeword.
pub fn decode_innovation(word: &Codeword, sigma: f64, cfg: &QuantizerConfig, xi: f64) -> Result<f64> {
    let model = GaussianModel::new(sigma, cfg.delta, xi)?;
    Ok(reconstruct(decode(word, &model)?, cfg, xi))
}

/// Sensor-side step for a linear measurement row `c_i`: θ = y − C_i x̂_pred,
/// coded with predictive variance C_i P_pred C_iᵀ.
pub fn innovation_codec_step(
    y: f64,
    x_pred: &DVector<f64>,
    c_i: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    cfg: &QuantizerConfig,
    xi: f64,
) -> Result<CodecStep> {
    let theta = y - c_i.dot(x_pred);
    let sigma = linalg::quad_form(p_pred, c_i).max(0.0).sqrt();
    code_innovation(theta, sigma, cfg, xi)
}
