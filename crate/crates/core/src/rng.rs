//! Reproducible random substreams.
//!
//! Every consumer (source process, each sensor's dither, drone initial
//! conditions) gets its own ChaCha stream derived from one base seed, so the
//! encoder and decoder can regenerate the same numbers independently.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream id of the source process noise.
pub const SOURCE_STREAM: u64 = 0;
/// Stream id used for scenario initial conditions.
pub const SCENARIO_STREAM: u64 = 1;
/// Dither streams start here; sensor `i` uses `DITHER_STREAM_BASE + i`.
pub const DITHER_STREAM_BASE: u64 = 1 << 32;

pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform sample in [0, 1) at a fixed counter position, independent of call order.
pub fn uniform_at(seed: u64, stream: u64, index: u64) -> f64 {
    use rand::RngCore;
    let mut rng = substream(seed, stream);
    // each index consumes two 32-bit words
    rng.set_word_pos(u128::from(index) * 2);
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
