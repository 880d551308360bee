//! Deterministic SplitMix64 streams shared by device, server and enrollment.
//!
//! Both sides of the protocol regenerate the same random numbers, shuffle
//! sequences and PUF sub-challenges, so every stream here is bit-exact and
//! fully determined by its seed.

use thiserror::Error;

use crate::bitstring::{BitError, BitString};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Width of every random number in the RN stream.
pub const RN_BITS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrngError {
    #[error("seed must be {RN_BITS} bits, got {0}")]
    SeedLength(usize),
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("sub-challenge width {0} outside 1..=128")]
    StageLength(usize),
    #[error("last RN ordinal must be odd, got {0}")]
    EvenLastOrdinal(u64),
    #[error(transparent)]
    Bits(#[from] BitError),
}

/// One SplitMix64 step: returns the advanced state and the output word.
pub fn splitmix_next(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (state, z ^ (z >> 31))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng64 {
    state: u64,
}

impl Prng64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    /// Folds a 128-bit seed into a state by XOR-ing its two halves.
    pub fn seed_from_bits(seed: &BitString) -> Result<Self, PrngError> {
        Ok(Self::new(fold_seed(seed)?))
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let (state, out) = splitmix_next(self.state);
        self.state = state;
        out
    }

    /// Two outputs, first in the high word.
    pub fn next_u128(&mut self) -> u128 {
        let hi = self.next_u64() as u128;
        let lo = self.next_u64() as u128;
        (hi << 64) | lo
    }
}

pub fn fold_seed(seed: &BitString) -> Result<u64, PrngError> {
    if seed.len() != RN_BITS {
        return Err(PrngError::SeedLength(seed.len()));
    }
    let v = seed.to_u128().expect("128-bit seed");
    Ok((v >> 64) as u64 ^ v as u64)
}

/// The RN stream `N_0, N_1, ..., N_m`.
#[derive(Debug, Clone)]
pub struct RnStream {
    seed_state: u64,
    prng: Prng64,
    index: u64,
    last: u64,
}

impl RnStream {
    pub fn new(seed: &BitString, last: u64) -> Result<Self, PrngError> {
        if last % 2 == 0 {
            return Err(PrngError::EvenLastOrdinal(last));
        }
        let seed_state = fold_seed(seed)?;
        Ok(Self { seed_state, prng: Prng64::new(seed_state), index: 0, last })
    }

    /// Ordinal of the RN the next call to [`RnStream::next_rn`] returns.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn last(&self) -> u64 {
        self.last
    }

    pub fn is_exhausted(&self) -> bool {
        self.index > self.last
    }

    /// Jumps to ordinal `index`. SplitMix state advances linearly, so this is O(1).
    pub fn seek(&mut self, index: u64) {
        let steps = index.wrapping_mul(2);
        self.prng = Prng64::new(self.seed_state.wrapping_add(steps.wrapping_mul(GOLDEN_GAMMA)));
        self.index = index;
    }

    /// Restarts from `N_0`.
    pub fn reset(&mut self) {
        self.seek(0);
    }

    pub fn next_rn(&mut self) -> BitString {
        self.index += 1;
        BitString::from_u128(self.prng.next_u128(), RN_BITS).expect("128-bit RN")
    }

    pub fn rn_at(&self, index: u64) -> BitString {
        let mut s = self.clone();
        s.seek(index);
        s.next_rn()
    }
}

/// The `len` numbers driving one keyed shuffle.
pub fn shuffle_sequence(key: u64, len: usize) -> Result<Vec<u64>, PrngError> {
    if len == 0 {
        return Err(PrngError::EmptySequence);
    }
    let mut prng = Prng64::new(key);
    Ok((0..len).map(|_| prng.next_u64()).collect())
}

/// Expands one RN into `count` PUF sub-challenges of `stage_len` bits each.
///
/// Every sub-challenge consumes `ceil(stage_len / 64)` outputs, concatenated
/// MSB-first and cut to `stage_len` bits.
pub fn subchallenges(
    seed_rn: &BitString,
    count: usize,
    stage_len: usize,
) -> Result<Vec<BitString>, PrngError> {
    if count == 0 {
        return Err(PrngError::EmptySequence);
    }
    if stage_len == 0 || stage_len > 128 {
        return Err(PrngError::StageLength(stage_len));
    }
    let mut prng = Prng64::seed_from_bits(seed_rn)?;
    let words = stage_len.div_ceil(64);
    (0..count)
        .map(|_| {
            let mut raw = 0u128;
            for _ in 0..words {
                raw = (raw << 64) | prng.next_u64() as u128;
            }
            let value = raw >> (words * 64 - stage_len);
            Ok(BitString::from_u128(value, stage_len)?)
        })
        .collect()
}

/// Scans seeds `start, start+1, ...` (as 128-bit values with a zero high half)
/// for the first one whose RNs `N_0..=N_last` all pass the balance check.
pub fn find_balanced_seed(last: u64, start: u128, limit: u32) -> Option<BitString> {
    (0..limit as u128).map(|k| start + k).find_map(|candidate| {
        let seed = BitString::from_u128(candidate, RN_BITS).ok()?;
        let mut stream = RnStream::new(&seed, last).ok()?;
        (0..=last)
            .all(|_| crate::bitstring::balance_check(&stream.next_rn()))
            .then_some(seed)
    })
}
