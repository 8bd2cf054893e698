//! Entropy codec for dithered quantizer indices.
//!
//! Given the dither ξ, the index k = Q_Δ(θ + ξ)/Δ of a Gaussian innovation
//! θ ~ N(0, σ²) has a known pmf. Each step builds a canonical Huffman code for
//! that pmf, so every codeword is self-delimiting and decodable on arrival.
//! Indices beyond ±8σ go through an escape symbol followed by a direction bit
//! and an Elias-gamma distance, so any i64 index round-trips. When the pmf is
//! very wide, neighbouring indices are grouped into buckets of 2^b and the
//! offset inside a bucket is sent as b raw bits.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::bits::{read_gamma, write_gamma, BitReader, BitWriter, Codeword};
use crate::error::{invalid, Error, Result};

/// Support of the in-range alphabet, in standard deviations.
const RANGE_SIGMAS: f64 = 8.0;
const MAX_BUCKETS: i64 = 4096;
const MAX_CODE_LEN: u8 = 62;
const INITIAL_FLOOR: f64 = 1e-12;

/// Predictive model for one quantizer index, shared by encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    pub sigma: f64,
    pub delta: f64,
    pub xi: f64,
}

impl GaussianModel {
    pub fn new(sigma: f64, delta: f64, xi: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("model standard deviation must be finite and >= 0, got {sigma}")));
        }
        if !(delta > 0.0 && delta.is_finite()) || !xi.is_finite() {
            return Err(invalid("quantizer step must be positive and dither finite"));
        }
        Ok(Self { sigma, delta, xi })
    }

    /// P(k_lo <= k <= k_hi | ξ).
    pub fn range_prob(&self, k_lo: i64, k_hi: i64) -> f64 {
        let lo = (k_lo as f64 - 0.5) * self.delta - self.xi;
        let hi = (k_hi as f64 + 0.5) * self.delta - self.xi;
        if self.sigma == 0.0 {
            return if lo <= 0.0 && 0.0 < hi { 1.0 } else { 0.0 };
        }
        normal_mass(lo / self.sigma, hi / self.sigma)
    }

    pub fn prob(&self, k: i64) -> f64 {
        self.range_prob(k, k)
    }

    /// Entropy of the index in bits, by direct summation over ±12σ.
    pub fn entropy_bits(&self) -> f64 {
        let c = self.xi / self.delta;
        let s = self.sigma / self.delta;
        let lo = (c - 12.0 * s).floor() as i64 - 1;
        let hi = (c + 12.0 * s).ceil() as i64 + 1;
        (lo..=hi)
            .map(|k| self.prob(k))
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }
}

/// Φ(b) − Φ(a) evaluated on the tail side that keeps precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let v = if a >= 0.0 {
        0.5 * (libm::erfc(a * r) - libm::erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * r) - libm::erfc(-a * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * r) + libm::erfc(b * r))
    };
    v.max(0.0)
}

#[derive(Debug, Clone)]
pub struct CodeBook {
    k_lo: i64,
    bucket_bits: u32,
    n_buckets: usize,
    lengths: Vec<u8>,
    codes: Vec<u64>,
    // canonical decoding tables, indexed by code length
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    count: Vec<usize>,
    sorted_symbols: Vec<usize>,
}

impl CodeBook {
    pub fn new(model: &GaussianModel) -> Self {
        let c = model.xi / model.delta;
        let s = model.sigma / model.delta;
        let k_lo = (c - RANGE_SIGMAS * s).floor() as i64;
        let k_hi = (c + RANGE_SIGMAS * s).ceil() as i64;
        let span = k_hi - k_lo + 1;
        let mut bucket_bits = 0u32;
        while (span + (1 << bucket_bits) - 1) >> bucket_bits > MAX_BUCKETS {
            bucket_bits += 1;
        }
        let n_buckets = ((span + (1 << bucket_bits) - 1) >> bucket_bits) as usize;
        let width = 1i64 << bucket_bits;
        let mut weights: Vec<f64> = (0..n_buckets)
            .map(|j| {
                let start = k_lo + j as i64 * width;
                model.range_prob(start, start + width - 1)
            })
            .collect();
        let covered: f64 = weights.iter().sum();
        weights.push((1.0 - covered).max(0.0));

        let mut floor = INITIAL_FLOOR;
        loop {
            let w: Vec<f64> = weights.iter().map(|&p| p.max(floor)).collect();
            let lengths = huffman_lengths(&w);
            if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
                return Self::canonical(k_lo, bucket_bits, n_buckets, lengths);
            }
            floor *= 16.0;
        }
    }

    fn canonical(k_lo: i64, bucket_bits: u32, n_buckets: usize, lengths: Vec<u8>) -> Self {
        let max_len = *lengths.iter().max().unwrap_or(&1) as usize;
        let mut sorted_symbols: Vec<usize> = (0..lengths.len()).collect();
        sorted_symbols.sort_by_key(|&s| (lengths[s], s));
        let mut codes = vec![0u64; lengths.len()];
        let mut first_code = vec![0u64; max_len + 2];
        let mut first_index = vec![0usize; max_len + 2];
        let mut count = vec![0usize; max_len + 2];
        let mut code = 0u64;
        let mut prev_len = lengths[sorted_symbols[0]];
        for (idx, &sym) in sorted_symbols.iter().enumerate() {
            let len = lengths[sym];
            if len != prev_len {
                code <<= len - prev_len;
                prev_len = len;
            }
            if count[len as usize] == 0 {
                first_code[len as usize] = code;
                first_index[len as usize] = idx;
            }
            codes[sym] = code;
            count[len as usize] += 1;
            code += 1;
        }
        Self { k_lo, bucket_bits, n_buckets, lengths, codes, first_code, first_index, count, sorted_symbols }
    }

    fn escape_symbol(&self) -> usize {
        self.n_buckets
    }

    fn k_hi(&self) -> i64 {
        self.k_lo + ((self.n_buckets as i64) << self.bucket_bits) - 1
    }

    pub fn code_length(&self, symbol: usize) -> u8 {
        self.lengths[symbol]
    }

    fn write_symbol(&self, w: &mut BitWriter, sym: usize) {
        w.push_bits(self.codes[sym], u32::from(self.lengths[sym]));
    }

    fn read_symbol(&self, r: &mut BitReader<'_>) -> Result<usize> {
        let mut code = 0u64;
        for len in 1..self.count.len() {
            code = (code << 1) | u64::from(r.read_bit()?);
            let n = self.count[len];
            if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n as u64 {
                return Ok(self.sorted_symbols[self.first_index[len] + (code - self.first_code[len]) as usize]);
            }
        }
        Err(Error::Decode("bit pattern matches no codeword".into()))
    }

    pub fn encode_into(&self, k: i64, w: &mut BitWriter) {
        if k < self.k_lo || k > self.k_hi() {
            self.write_symbol(w, self.escape_symbol());
            if k > self.k_hi() {
                w.push_bit(false);
                write_gamma(w, k.abs_diff(self.k_hi()));
            } else {
                w.push_bit(true);
                write_gamma(w, self.k_lo.abs_diff(k));
            }
            return;
        }
        let off = (k - self.k_lo) as u64;
        self.write_symbol(w, (off >> self.bucket_bits) as usize);
        w.push_bits(off & ((1u64 << self.bucket_bits) - 1), self.bucket_bits);
    }

    pub fn decode_from(&self, r: &mut BitReader<'_>) -> Result<i64> {
        let sym = self.read_symbol(r)?;
        if sym == self.escape_symbol() {
            let below = r.read_bit()?;
            let d = read_gamma(r)?;
            let k = if below {
                i128::from(self.k_lo) - i128::from(d)
            } else {
                i128::from(self.k_hi()) + i128::from(d)
            };
            return i64::try_from(k).map_err(|_| Error::Decode("escaped index overflows i64".into()));
        }
        let within = r.read_bits(self.bucket_bits)?;
        Ok(self.k_lo + ((sym as i64) << self.bucket_bits) + within as i64)
    }
}

/// Entropy-code one index with the model's Huffman code.
pub fn encode(k: i64, model: &GaussianModel) -> Codeword {
    let book = CodeBook::new(model);
    let mut w = BitWriter::new();
    book.encode_into(k, &mut w);
    w.finish()
}

/// Inverse of [`encode`]; the codeword must be consumed exactly.
pub fn decode(word: &Codeword, model: &GaussianModel) -> Result<i64> {
    let book = CodeBook::new(model);
    let mut r = BitReader::new(word);
    let k = book.decode_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} trailing bits after the codeword", r.remaining())));
    }
    Ok(k)
}

#[derive(Debug, PartialEq)]
struct Node {
    weight: f64,
    id: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on weight, ties broken by id for determinism
        other.weight.total_cmp(&self.weight).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Huffman code lengths; a single symbol still gets one bit.
fn huffman_lengths(weights: &[f64]) -> Vec<u8> {
    let n = weights.len();
    if n == 1 {
        return vec![1];
    }
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Node> = weights.iter().enumerate().map(|(id, &weight)| Node { weight, id }).collect();
    let mut next = n;
    while heap.len() > 1 {
        let a = heap.pop().unwrap();
        let b = heap.pop().unwrap();
        parent[a.id] = next;
        parent[b.id] = next;
        heap.push(Node { weight: a.weight + b.weight, id: next });
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u8; 2 * n - 1];
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]].saturating_add(1);
    }
    depth.truncate(n);
    depth
}
