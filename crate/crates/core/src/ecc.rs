//! Binary BCH code over GF(2^7) and code-offset helper data.
//!
//! Codewords are 127-bit strings; position 1 holds the coefficient of
//! `x^126` and position 127 the constant term. Encoding is systematic: the
//! 15 message bits lead, followed by the 112 parity bits.

use rand::RngCore;
use thiserror::Error;

use crate::bitstring::BitString;

/// Extension degree of the field.
pub const FIELD_DEGREE: u32 = 7;
/// x^7 + x^3 + 1
pub const PRIMITIVE_POLY: u16 = 0x89;
/// Code length `2^7 - 1`.
pub const CODE_LEN: usize = 127;
/// Designed correction capability.
pub const DEFAULT_T: usize = 27;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EccError {
    #[error("field element {0} outside GF(2^7)")]
    FieldRange(u16),
    #[error("expected {expected} bits, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("uncorrectable word")]
    DecodeFailure,
    #[error("correction capability {0} yields no message bits")]
    Capability(usize),
}

/// Log/antilog tables over the 127 nonzero elements.
#[derive(Debug, Clone)]
pub struct GfContext {
    exp: [u8; 2 * CODE_LEN],
    log: [u8; CODE_LEN + 1],
}

impl Default for GfContext {
    fn default() -> Self {
        Self::new()
    }
}

impl GfContext {
    pub fn new() -> Self {
        let mut exp = [0u8; 2 * CODE_LEN];
        let mut log = [0u8; CODE_LEN + 1];
        let mut x: u16 = 1;
        for (i, slot) in exp.iter_mut().enumerate().take(CODE_LEN) {
            *slot = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x80 != 0 {
                x ^= PRIMITIVE_POLY;
            }
        }
        for i in CODE_LEN..2 * CODE_LEN {
            exp[i] = exp[i - CODE_LEN];
        }
        Self { exp, log }
    }

    /// `α^e` for any exponent.
    pub fn pow_alpha(&self, e: usize) -> u8 {
        self.exp[e % CODE_LEN]
    }

    pub fn log(&self, a: u8) -> Option<usize> {
        (a != 0).then(|| self.log[a as usize] as usize)
    }

    fn mul(&self, a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    fn inv(&self, a: u8) -> u8 {
        debug_assert!(a != 0);
        self.exp[(CODE_LEN - self.log[a as usize] as usize) % CODE_LEN]
    }

    fn check(a: u16) -> Result<u8, EccError> {
        if a > 127 {
            Err(EccError::FieldRange(a))
        } else {
            Ok(a as u8)
        }
    }

    pub fn gf_mul(&self, a: u16, b: u16) -> Result<u8, EccError> {
        Ok(self.mul(Self::check(a)?, Self::check(b)?))
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn gf_inv(&self, a: u16) -> Result<Option<u8>, EccError> {
        let a = Self::check(a)?;
        Ok((a != 0).then(|| self.inv(a)))
    }
}

/// Carry-less product of two GF(2) polynomials (bit `d` = coefficient of `x^d`).
fn clmul(a: u128, b: u128) -> u128 {
    (0..128).filter(|i| b >> i & 1 == 1).fold(0, |acc, i| acc ^ (a << i))
}

fn degree(p: u128) -> usize {
    127 - p.leading_zeros() as usize
}

/// Remainder of `a` modulo `m` over GF(2).
fn poly_rem(mut a: u128, m: u128) -> u128 {
    let dm = degree(m);
    while a != 0 && degree(a) >= dm {
        a ^= m << (degree(a) - dm);
    }
    a
}

#[derive(Debug, Clone)]
pub struct BchCode {
    gf: GfContext,
    n: usize,
    k: usize,
    t: usize,
    generator: u128,
}

impl BchCode {
    /// BCH(127, 15, 27).
    pub fn standard() -> Self {
        Self::with_capability(DEFAULT_T).expect("t = 27 is a valid design")
    }

    /// Narrow-sense primitive BCH code of length 127 correcting `t` errors.
    /// The generator is the lcm of the minimal polynomials of `α^1..α^{2t}`.
    pub fn with_capability(t: usize) -> Result<Self, EccError> {
        if t == 0 {
            return Err(EccError::Capability(t));
        }
        let gf = GfContext::new();
        let mut covered = [false; CODE_LEN];
        let mut generator: u128 = 1;
        for i in 1..=2 * t {
            let i = i % CODE_LEN;
            if covered[i] {
                continue;
            }
            // Minimal polynomial Π (x - α^e) over the cyclotomic coset of i.
            let mut poly: Vec<u8> = vec![1];
            let mut e = i;
            loop {
                covered[e] = true;
                let root = gf.pow_alpha(e);
                let mut next = vec![0u8; poly.len() + 1];
                for (d, &c) in poly.iter().enumerate() {
                    next[d + 1] ^= c;
                    next[d] ^= gf.mul(c, root);
                }
                poly = next;
                e = (e * 2) % CODE_LEN;
                if e == i {
                    break;
                }
            }
            let minimal = poly.iter().enumerate().fold(0u128, |acc, (d, &c)| {
                debug_assert!(c <= 1, "minimal polynomial must be binary");
                acc | ((c as u128) << d)
            });
            generator = clmul(generator, minimal);
        }
        let parity = degree(generator);
        if parity >= CODE_LEN {
            return Err(EccError::Capability(t));
        }
        Ok(Self { gf, n: CODE_LEN, k: CODE_LEN - parity, t, generator })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn field(&self) -> &GfContext {
        &self.gf
    }

    /// Generator polynomial, bit `d` holding the coefficient of `x^d`.
    pub fn generator(&self) -> u128 {
        self.generator
    }

    pub fn generator_degree(&self) -> usize {
        degree(self.generator)
    }

    fn word_value(&self, word: &BitString) -> Result<u128, EccError> {
        if word.len() != self.n {
            return Err(EccError::Length { expected: self.n, actual: word.len() });
        }
        Ok(word.to_u128().expect("127 bits"))
    }

    pub fn encode(&self, msg: &BitString) -> Result<BitString, EccError> {
        if msg.len() != self.k {
            return Err(EccError::Length { expected: self.k, actual: msg.len() });
        }
        let shifted = msg.to_u128().expect("k <= 127") << (self.n - self.k);
        let cw = shifted | poly_rem(shifted, self.generator);
        Ok(BitString::from_u128(cw, self.n).expect("n bits"))
    }

    fn syndromes_of(&self, value: u128) -> Vec<u8> {
        (1..=2 * self.t)
            .map(|j| {
                (0..self.n)
                    .filter(|d| value >> d & 1 == 1)
                    .fold(0u8, |acc, d| acc ^ self.gf.pow_alpha(j * d))
            })
            .collect()
    }

    /// `S_j = r(α^j)` for `j = 1..=2t`.
    pub fn syndromes(&self, word: &BitString) -> Result<Vec<u8>, EccError> {
        Ok(self.syndromes_of(self.word_value(word)?))
    }

    /// Berlekamp-Massey; returns the error locator `Λ(x)` (coefficient `i` at index `i`).
    fn error_locator(&self, s: &[u8]) -> Vec<u8> {
        let gf = &self.gf;
        let mut c = vec![0u8; s.len() + 1];
        let mut b = vec![0u8; s.len() + 1];
        c[0] = 1;
        b[0] = 1;
        let mut l = 0usize;
        let mut shift = 1usize;
        let mut last_d = 1u8;
        for n in 0..s.len() {
            let d = (1..=l).fold(s[n], |acc, i| acc ^ gf.mul(c[i], s[n - i]));
            if d == 0 {
                shift += 1;
                continue;
            }
            let coef = gf.mul(d, gf.inv(last_d));
            let prev = c.clone();
            for i in 0..b.len() - shift {
                c[i + shift] ^= gf.mul(coef, b[i]);
            }
            if 2 * l <= n {
                l = n + 1 - l;
                b = prev;
                last_d = d;
                shift = 1;
            } else {
                shift += 1;
            }
        }
        c.truncate(l + 1);
        c
    }

    /// Corrects up to `t` errors. More errors yield [`EccError::DecodeFailure`]
    /// or, rarely, a different codeword within distance `t` of the input.
    pub fn decode(&self, word: &BitString) -> Result<BitString, EccError> {
        let mut value = self.word_value(word)?;
        let s = self.syndromes_of(value);
        if s.iter().all(|&x| x == 0) {
            return Ok(word.clone());
        }
        let locator = self.error_locator(&s);
        let errors = locator.len() - 1;
        if errors > self.t {
            return Err(EccError::DecodeFailure);
        }
        // Chien search: an error at degree d makes α^{-d} a root.
        let mut found = 0;
        for d in 0..self.n {
            let x_inv = (self.n - d) % self.n;
            let eval = locator
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &c)| acc ^ self.gf.mul(c, self.gf.pow_alpha(i * x_inv)));
            if eval == 0 {
                value ^= 1u128 << d;
                found += 1;
            }
        }
        if found != errors || self.syndromes_of(value).iter().any(|&x| x != 0) {
            return Err(EccError::DecodeFailure);
        }
        Ok(BitString::from_u128(value, self.n).expect("n bits"))
    }

    pub fn helper_gen<R: RngCore + ?Sized>(
        &self,
        response: &BitString,
        rng: &mut R,
    ) -> Result<HelperData, EccError> {
        if response.len() != self.n {
            return Err(EccError::Length { expected: self.n, actual: response.len() });
        }
        let msg = BitString::random(self.k, rng).expect("k bits");
        let mask = response.xor(&self.encode(&msg)?).expect("n bits");
        Ok(HelperData { mask })
    }

    /// Corrects a noisy response against enrolled helper data.
    pub fn recover(&self, help: &HelperData, noisy: &BitString) -> Result<BitString, EccError> {
        if noisy.len() != self.n || help.mask.len() != self.n {
            return Err(EccError::Length { expected: self.n, actual: noisy.len() });
        }
        let codeword = self.decode(&noisy.xor(&help.mask).expect("n bits"))?;
        Ok(codeword.xor(&help.mask).expect("n bits"))
    }
}

/// Code-offset mask: enrolled response XOR a random codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperData {
    pub mask: BitString,
}
