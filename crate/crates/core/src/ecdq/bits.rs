use crate::error::{Error, Result};

/// Variable-length bit string, packed MSB-first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Codeword {
    bytes: Vec<u8>,
    len: usize,
}

impl Codeword {
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if len > bytes.len() * 8 || bytes.len() != len.div_ceil(8) {
            return Err(Error::Decode(format!("{} bytes cannot hold exactly {len} bits", bytes.len())));
        }
        Ok(Self { bytes, len })
    }

    /// Length in bits.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        (self.bytes[i / 8] >> (7 - i % 8)) & 1 == 1
    }

    /// Bits as a '0'/'1' string, handy in tests and logs.
    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.bit(i) { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    /// Low `count` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn finish(self) -> Codeword {
        Codeword { bytes: self.bytes, len: self.len }
    }
}

pub struct BitReader<'a> {
    word: &'a Codeword,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(word: &'a Codeword) -> Self {
        Self { word, pos: 0 }
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.word.len {
            return Err(Error::Decode(format!("codeword exhausted after {} bits", self.pos)));
        }
        let b = self.word.bit(self.pos);
        self.pos += 1;
        Ok(b)
    }

    pub fn read_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..count {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn remaining(&self) -> usize {
        self.word.len - self.pos
    }
}

/// Elias gamma code for d >= 1.
pub fn write_gamma(w: &mut BitWriter, d: u64) {
    debug_assert!(d >= 1);
    let nbits = 64 - d.leading_zeros();
    for _ in 1..nbits {
        w.push_bit(false);
    }
    w.push_bits(d, nbits);
}

pub fn read_gamma(r: &mut BitReader<'_>) -> Result<u64> {
    let mut zeros = 0u32;
    while !r.read_bit()? {
        zeros += 1;
        if zeros >= 64 {
            return Err(Error::Decode("gamma prefix longer than 63 bits".into()));
        }
    }
    let rest = r.read_bits(zeros)?;
    Ok((1u64 << zeros) | rest)
}
