//! Fixed-length bit vectors.
//!
//! Position 1 (index 0) is the leftmost, most significant bit. The byte form
//! packs bits MSB-first: index 0 lands in bit 7 of byte 0, and unused trailing
//! bits of the final byte are zero.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Longest supported bit string.
pub const MAX_BITS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid bit length {0} (must be 1..={MAX_BITS})")]
    InvalidLength(usize),
    #[error("expected {expected} bytes for {bits} bits, got {actual}")]
    ByteLength { bits: usize, expected: usize, actual: usize },
    #[error("padding bits set in final byte")]
    NonzeroPadding,
    #[error("invalid hex: {0}")]
    Hex(String),
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    len: usize,
    bytes: Vec<u8>,
}

fn byte_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

fn check_len(len: usize) -> Result<(), BitError> {
    if len == 0 || len > MAX_BITS {
        Err(BitError::InvalidLength(len))
    } else {
        Ok(())
    }
}

impl BitString {
    pub fn zeros(len: usize) -> Result<Self, BitError> {
        check_len(len)?;
        Ok(Self { len, bytes: vec![0; byte_len(len)] })
    }

    pub fn ones(len: usize) -> Result<Self, BitError> {
        Ok(Self::zeros(len)?.complement())
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self, BitError> {
        let mut out = Self::zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            out.set(i, b);
        }
        Ok(out)
    }

    /// Parses a string of `'0'`/`'1'` characters.
    pub fn from_bin_str(s: &str) -> Result<Self, BitError> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(BitError::Hex(format!("not a binary digit: {c:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bits(&bits)
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, BitError> {
        check_len(len)?;
        let expected = byte_len(len);
        if bytes.len() != expected {
            return Err(BitError::ByteLength { bits: len, expected, actual: bytes.len() });
        }
        let spare = expected * 8 - len;
        if spare > 0 && bytes[expected - 1] & ((1u8 << spare) - 1) != 0 {
            return Err(BitError::NonzeroPadding);
        }
        Ok(Self { len, bytes: bytes.to_vec() })
    }

    /// Builds a string from the low `len` bits of `value`, most significant first.
    pub fn from_u128(value: u128, len: usize) -> Result<Self, BitError> {
        if len == 0 || len > 128 {
            return Err(BitError::InvalidLength(len));
        }
        let mut out = Self::zeros(len)?;
        for i in 0..len {
            out.set(i, (value >> (len - 1 - i)) & 1 == 1);
        }
        Ok(out)
    }

    /// Inverse of [`BitString::from_u128`]; only defined for `len <= 128`.
    pub fn to_u128(&self) -> Option<u128> {
        if self.len > 128 {
            return None;
        }
        Some((0..self.len).fold(0u128, |acc, i| (acc << 1) | self.get(i) as u128))
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self, BitError> {
        if hex.len() % 2 != 0 {
            return Err(BitError::Hex(format!("odd digit count in {hex:?}")));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| {
                hex.get(i..i + 2)
                    .and_then(|d| u8::from_str_radix(d, 16).ok())
                    .ok_or_else(|| BitError::Hex(hex.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_bytes(&bytes, len)
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self, BitError> {
        let mut out = Self::zeros(len)?;
        rng.fill(out.bytes.as_mut_slice());
        out.clear_padding();
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let b = self.get(i);
        self.set(i, !b);
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_bits(&self) -> Vec<bool> {
        self.bits().collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bytes.clone()
    }

    /// Lowercase hex of the byte serialization, no prefix.
    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn popcount(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn complement(&self) -> Self {
        let mut out = Self { len: self.len, bytes: self.bytes.iter().map(|b| !b).collect() };
        out.clear_padding();
        out
    }

    pub fn xor(&self, other: &Self) -> Result<Self, BitError> {
        self.same_len(other)?;
        let bytes = self.bytes.iter().zip(&other.bytes).map(|(a, b)| a ^ b).collect();
        Ok(Self { len: self.len, bytes })
    }

    pub fn hamming_distance(&self, other: &Self) -> Result<usize, BitError> {
        self.same_len(other)?;
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// First `len` bits.
    pub fn truncate(&self, len: usize) -> Result<Self, BitError> {
        if len == 0 || len > self.len {
            return Err(BitError::InvalidLength(len));
        }
        let mut out = Self { len, bytes: self.bytes[..byte_len(len)].to_vec() };
        out.clear_padding();
        Ok(out)
    }

    fn same_len(&self, other: &Self) -> Result<(), BitError> {
        if self.len == other.len {
            Ok(())
        } else {
            Err(BitError::LengthMismatch { left: self.len, right: other.len })
        }
    }

    fn clear_padding(&mut self) {
        let spare = self.bytes.len() * 8 - self.len;
        if spare > 0 {
            let last = self.bytes.len() - 1;
            self.bytes[last] &= !((1u8 << spare) - 1);
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({}:{})", self.len, self.to_hex())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Minimum count of ones (and of zeros) for a string of `len` bits to count as balanced.
pub fn balance_threshold(len: usize) -> usize {
    (3 * len).div_ceil(10)
}

/// Accepts strings whose ones/zeros split is no worse than 30/70 either way.
pub fn balance_check(n: &BitString) -> bool {
    let min = balance_threshold(n.len());
    let ones = n.popcount();
    ones >= min && ones <= n.len() - min
}
