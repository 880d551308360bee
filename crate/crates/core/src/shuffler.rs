//! Keyed Fisher-Yates bit shuffling and its inverse.
//!
//! For `i = L` down to `2` the element at position `j_i` (drawn from
//! `[1, i]`) is swapped with position `i`, positions counted from the left
//! starting at 1. Deshuffling replays the same swaps in the opposite order.

use thiserror::Error;

use crate::bitstring::BitString;
use crate::prng::shuffle_sequence;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShuffleError {
    #[error("swap sequence covers {expected} elements, input has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("j = {j} outside [1, {i}] at iteration i = {i}")]
    OutOfRange { i: usize, j: usize },
    #[error("cannot shuffle an empty input")]
    Empty,
}

/// Maps a raw PRNG word into `[1, i]`.
pub fn range_map(num: u64, i: usize) -> usize {
    assert!(i >= 1, "range upper bound must be at least 1");
    (num % i as u64) as usize + 1
}

/// The swap partners `j_L, j_{L-1}, ..., j_2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapSequence {
    len: usize,
    j_values: Vec<usize>,
}

impl SwapSequence {
    /// Accepts `j` values listed for `i = L, L-1, ...`. Either `L - 1` values
    /// or `L` values (with the forced trailing `j_1 = 1`) are allowed.
    pub fn new(len: usize, mut j_values: Vec<usize>) -> Result<Self, ShuffleError> {
        if len == 0 {
            return Err(ShuffleError::Empty);
        }
        if j_values.len() == len {
            if j_values[len - 1] != 1 {
                return Err(ShuffleError::OutOfRange { i: 1, j: j_values[len - 1] });
            }
            j_values.pop();
        }
        if j_values.len() != len - 1 {
            return Err(ShuffleError::LengthMismatch { expected: j_values.len() + 1, actual: len });
        }
        for (k, &j) in j_values.iter().enumerate() {
            let i = len - k;
            if j == 0 || j > i {
                return Err(ShuffleError::OutOfRange { i, j });
            }
        }
        Ok(Self { len, j_values })
    }

    /// Derives the sequence for `len` elements from a shuffle key.
    pub fn from_key(key: u64, len: usize) -> Result<Self, ShuffleError> {
        let nums = shuffle_sequence(key, len).map_err(|_| ShuffleError::Empty)?;
        // num_{L-i+1} drives iteration i.
        let j_values = (2..=len).rev().map(|i| range_map(nums[len - i], i)).collect();
        Ok(Self { len, j_values })
    }

    /// The sequence whose every swap is a self-swap.
    pub fn identity(len: usize) -> Result<Self, ShuffleError> {
        Self::new(len, (2..=len).rev().collect())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn j_values(&self) -> &[usize] {
        &self.j_values
    }

    /// `(i, j)` swap pairs in shuffle order, 0-indexed.
    fn swaps(&self) -> impl DoubleEndedIterator<Item = (usize, usize)> + '_ {
        self.j_values.iter().enumerate().map(move |(k, &j)| (self.len - k - 1, j - 1))
    }

    fn check(&self, actual: usize) -> Result<(), ShuffleError> {
        if actual == self.len {
            Ok(())
        } else {
            Err(ShuffleError::LengthMismatch { expected: self.len, actual })
        }
    }
}

pub fn shuffle_with_sequence<T>(items: &mut [T], seq: &SwapSequence) -> Result<(), ShuffleError> {
    seq.check(items.len())?;
    for (i, j) in seq.swaps() {
        items.swap(i, j);
    }
    Ok(())
}

pub fn deshuffle_with_sequence<T>(items: &mut [T], seq: &SwapSequence) -> Result<(), ShuffleError> {
    seq.check(items.len())?;
    for (i, j) in seq.swaps().rev() {
        items.swap(i, j);
    }
    Ok(())
}

fn apply(x: &BitString, key: u64, inverse: bool) -> BitString {
    let seq = SwapSequence::from_key(key, x.len()).expect("bit strings are never empty");
    let mut bits = x.to_bits();
    if inverse {
        deshuffle_with_sequence(&mut bits, &seq)
    } else {
        shuffle_with_sequence(&mut bits, &seq)
    }
    .expect("sequence built for this length");
    BitString::from_bits(&bits).expect("same length as input")
}

pub fn shuffle(x: &BitString, key: u64) -> BitString {
    apply(x, key, false)
}

pub fn deshuffle(s: &BitString, key: u64) -> BitString {
    apply(s, key, true)
}

/// Where each input position ends up under `shuffle(·, key)`, as a list of
/// source indices per output position.
pub fn permutation(key: u64, len: usize) -> Result<Vec<usize>, ShuffleError> {
    let seq = SwapSequence::from_key(key, len)?;
    let mut idx: Vec<usize> = (0..len).collect();
    shuffle_with_sequence(&mut idx, &seq)?;
    Ok(idx)
}
