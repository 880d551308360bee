//! Software model of the device's strong PUF.
//!
//! Each device is an XOR of `chains` arbiter chains under the additive delay
//! model. A chain's bit for challenge `c` is `[w · Φ(c) + ε > 0]` where
//! `Φ_k = Π_{j ≥ k} (1 − 2 c_j)` and the final feature is the constant 1.
//!
//! Delay weights are drawn once per device from a standard normal sampler:
//! a [`Prng64`] seeded with `device_seed` feeds Box-Muller with
//! `u1 = ((x1 >> 11) + 1) · 2^-53` and `u2 = (x2 >> 11) · 2^-53`, yielding
//! `r·cos(2πu2)` then `r·sin(2πu2)` where `r = sqrt(−2 ln u1)`. Weights fill
//! chain-major, stage order, so re-instantiation is bit-exact.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstring::BitString;
use crate::prng::{subchallenges, Prng64, RN_BITS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PufError {
    #[error("invalid PUF configuration: {0}")]
    InvalidConfig(String),
    #[error("challenge has {actual} bits, PUF has {expected} stages")]
    ChallengeLength { expected: usize, actual: usize },
    #[error("target bit error rate {0} outside [0, 0.5)")]
    BerOutOfRange(f64),
    #[error("sigma search did not converge: target {target}, best estimate {achieved}")]
    NoConvergence { target: f64, achieved: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PufConfig {
    pub stages: usize,
    pub chains: usize,
    pub response_len: usize,
    pub sigma_noise: f64,
    pub device_seed: u64,
}

impl Default for PufConfig {
    fn default() -> Self {
        Self { stages: 64, chains: 3, response_len: 127, sigma_noise: 0.0, device_seed: 0x0D3F_1CE5_EED0_0001 }
    }
}

impl PufConfig {
    pub fn validate(&self) -> Result<(), PufError> {
        if self.stages == 0 || self.stages > 128 {
            return Err(PufError::InvalidConfig(format!("stages = {}", self.stages)));
        }
        if self.chains == 0 {
            return Err(PufError::InvalidConfig("chains = 0".into()));
        }
        if self.response_len == 0 {
            return Err(PufError::InvalidConfig("response_len = 0".into()));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(PufError::InvalidConfig(format!("sigma_noise = {}", self.sigma_noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PufInstance {
    config: PufConfig,
    weights: Vec<Vec<f64>>,
}

struct NormalSource {
    prng: Prng64,
    spare: Option<f64>,
}

impl NormalSource {
    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.prng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.prng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

impl PufInstance {
    pub fn new(config: PufConfig) -> Result<Self, PufError> {
        config.validate()?;
        let mut normal = NormalSource { prng: Prng64::new(config.device_seed), spare: None };
        let weights = (0..config.chains)
            .map(|_| (0..=config.stages).map(|_| normal.next()).collect())
            .collect();
        Ok(Self { config, weights })
    }

    /// Builds an instance with explicit delay weights, one row per chain.
    pub fn from_weights(config: PufConfig, weights: Vec<Vec<f64>>) -> Result<Self, PufError> {
        config.validate()?;
        if weights.len() != config.chains
            || weights.iter().any(|w| w.len() != config.stages + 1)
        {
            return Err(PufError::InvalidConfig("weight matrix shape".into()));
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &PufConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.config.sigma_noise
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self, PufError> {
        self.config.sigma_noise = sigma;
        self.config.validate()?;
        Ok(self)
    }

    fn features(&self, c: &BitString) -> Result<Vec<f64>, PufError> {
        if c.len() != self.config.stages {
            return Err(PufError::ChallengeLength { expected: self.config.stages, actual: c.len() });
        }
        let mut phi = vec![1.0; self.config.stages + 1];
        for k in (0..self.config.stages).rev() {
            let sign = if c.get(k) { -1.0 } else { 1.0 };
            phi[k] = sign * phi[k + 1];
        }
        Ok(phi)
    }

    /// Noiseless delay differences `w · Φ` per chain.
    pub fn margins(&self, c: &BitString) -> Result<Vec<f64>, PufError> {
        let phi = self.features(c)?;
        Ok(self.weights.iter().map(|w| w.iter().zip(&phi).map(|(a, b)| a * b).sum()).collect())
    }

    fn combine(&self, margins: &[f64], mut noise: impl FnMut() -> f64) -> bool {
        margins.iter().fold(false, |acc, m| acc ^ (m + noise() > 0.0))
    }

    pub fn eval_bit(&self, c: &BitString) -> Result<bool, PufError> {
        Ok(self.combine(&self.margins(c)?, || 0.0))
    }

    /// One evaluation with per-chain Gaussian delay noise of the configured sigma.
    pub fn eval_bit_noisy<R: RngCore + ?Sized>(
        &self,
        c: &BitString,
        rng: &mut R,
    ) -> Result<bool, PufError> {
        let sigma = self.config.sigma_noise;
        let margins = self.margins(c)?;
        Ok(self.combine(&margins, || {
            if sigma == 0.0 {
                0.0
            } else {
                sigma * rng.sample::<f64, _>(StandardNormal)
            }
        }))
    }

    fn challenges_for(&self, seed_rn: &BitString) -> Vec<BitString> {
        subchallenges(seed_rn, self.config.response_len, self.config.stages)
            .expect("validated config and 128-bit seed")
    }

    fn check_seed(seed_rn: &BitString) -> Result<(), PufError> {
        if seed_rn.len() != RN_BITS {
            return Err(PufError::ChallengeLength { expected: RN_BITS, actual: seed_rn.len() });
        }
        Ok(())
    }

    /// Response to the sub-challenges expanded from one RN.
    pub fn eval_response(&self, seed_rn: &BitString) -> Result<BitString, PufError> {
        Self::check_seed(seed_rn)?;
        let bits = self
            .challenges_for(seed_rn)
            .iter()
            .map(|c| self.eval_bit(c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BitString::from_bits(&bits).expect("response_len validated"))
    }

    pub fn eval_response_noisy<R: RngCore + ?Sized>(
        &self,
        seed_rn: &BitString,
        rng: &mut R,
    ) -> Result<BitString, PufError> {
        Self::check_seed(seed_rn)?;
        let bits = self
            .challenges_for(seed_rn)
            .iter()
            .map(|c| self.eval_bit_noisy(c, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BitString::from_bits(&bits).expect("response_len validated"))
    }

    /// Monte Carlo bit error rate (noisy vs noiseless) at a given sigma over a
    /// fresh sample of `responses` random RNs.
    pub fn estimate_ber<R: RngCore + ?Sized>(&self, sigma: f64, responses: usize, rng: &mut R) -> f64 {
        let inst = self.clone().with_sigma(sigma).expect("sigma >= 0");
        let mut errors = 0usize;
        for _ in 0..responses {
            let rn = BitString::random(RN_BITS, rng).expect("128 bits");
            let clean = inst.eval_response(&rn).expect("valid seed");
            let noisy = inst.eval_response_noisy(&rn, rng).expect("valid seed");
            errors += clean.hamming_distance(&noisy).expect("same length");
        }
        errors as f64 / (responses * self.config.response_len) as f64
    }

    /// Finds the noise sigma that produces `target_ber`.
    ///
    /// Bisection runs over a frozen sample of challenges and standard-normal
    /// draws (at least 10,000 bit evaluations), so each probe of the search
    /// sees the same randomness.
    pub fn calibrate_sigma(&self, target_ber: f64) -> Result<f64, PufError> {
        if !(0.0..0.5).contains(&target_ber) {
            return Err(PufError::BerOutOfRange(target_ber));
        }
        if target_ber == 0.0 {
            return Ok(0.0);
        }
        const RESPONSES: usize = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.device_seed ^ 0xCA1B_0000);
        let mut margins = Vec::new();
        let mut draws = Vec::new();
        for _ in 0..RESPONSES {
            let rn = BitString::random(RN_BITS, &mut rng).expect("128 bits");
            for c in self.challenges_for(&rn) {
                let m = self.margins(&c)?;
                draws.extend(m.iter().map(|_| rng.sample::<f64, _>(StandardNormal)));
                margins.extend(m);
            }
        }
        let chains = self.config.chains;
        let total = margins.len() / chains;
        let ber_at = |sigma: f64| {
            let flips = margins
                .chunks(chains)
                .zip(draws.chunks(chains))
                .filter(|(m, z)| {
                    let clean = m.iter().fold(false, |a, &x| a ^ (x > 0.0));
                    let noisy = m.iter().zip(z.iter()).fold(false, |a, (&x, &e)| a ^ (x + sigma * e > 0.0));
                    clean != noisy
                })
                .count();
            flips as f64 / total as f64
        };

        let mut hi = 1.0;
        while ber_at(hi) < target_ber {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(PufError::NoConvergence { target: target_ber, achieved: ber_at(hi) });
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if ber_at(mid) < target_ber {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let achieved = ber_at(hi);
        if (achieved - target_ber).abs() > 0.01 {
            return Err(PufError::NoConvergence { target: target_ber, achieved });
        }
        Ok(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_stage() -> PufInstance {
        let cfg = PufConfig { stages: 2, chains: 1, response_len: 4, ..Default::default() };
        PufInstance::from_weights(cfg, vec![vec![1.0, -2.0, 0.5]]).unwrap()
    }

    fn bits(s: &str) -> BitString {
        BitString::from_bin_str(s).unwrap()
    }

    #[test]
    fn hand_evaluated_two_stage() {
        let p = two_stage();
        // Φ = (1, 1, 1), w·Φ = -0.5
        assert_eq!(p.margins(&bits("00")).unwrap(), vec![-0.5]);
        assert!(!p.eval_bit(&bits("00")).unwrap());
        // c_1 = 1 negates Φ_1 only: Φ = (-1, 1, 1), w·Φ = -2.5
        assert_eq!(p.margins(&bits("10")).unwrap(), vec![-2.5]);
        assert!(!p.eval_bit(&bits("10")).unwrap());
        // c_2 = 1 negates Φ_1 and Φ_2: Φ = (-1, -1, 1), w·Φ = 1.5
        assert_eq!(p.margins(&bits("01")).unwrap(), vec![1.5]);
        assert!(p.eval_bit(&bits("01")).unwrap());
        assert!(matches!(p.eval_bit(&bits("000")), Err(PufError::ChallengeLength { .. })));
    }

    #[test]
    fn noiseless_is_repeatable() {
        let p = two_stage();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(p.eval_bit_noisy(&bits("01"), &mut rng).unwrap());
        }
        let inst = PufInstance::new(PufConfig::default()).unwrap();
        let rn = BitString::random(128, &mut rng).unwrap();
        let a = inst.eval_response_noisy(&rn, &mut rng).unwrap();
        assert_eq!(a, inst.eval_response(&rn).unwrap());
        assert_eq!(a.len(), 127);
    }

    #[test]
    fn weights_deterministic_per_seed() {
        let a = PufInstance::new(PufConfig::default()).unwrap();
        let b = PufInstance::new(PufConfig::default()).unwrap();
        assert_eq!(a.weights(), b.weights());
        let c = PufInstance::new(PufConfig { device_seed: 7, ..Default::default() }).unwrap();
        assert_ne!(a.weights(), c.weights());
        assert_eq!(a.weights().len(), 3);
        assert_eq!(a.weights()[0].len(), 65);
    }

    #[test]
    fn weights_look_standard_normal() {
        let cfg = PufConfig { stages: 127, chains: 100, ..Default::default() };
        let inst = PufInstance::new(cfg).unwrap();
        let all: Vec<f64> = inst.weights().iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn invalid_configs() {
        assert!(PufInstance::new(PufConfig { chains: 0, ..Default::default() }).is_err());
        assert!(PufInstance::new(PufConfig { stages: 0, ..Default::default() }).is_err());
        assert!(PufInstance::new(PufConfig { sigma_noise: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn calibration_edges() {
        let inst = PufInstance::new(PufConfig::default()).unwrap();
        assert_eq!(inst.calibrate_sigma(0.0).unwrap(), 0.0);
        assert_eq!(inst.calibrate_sigma(0.6), Err(PufError::BerOutOfRange(0.6)));
        assert!(inst.calibrate_sigma(0.5).is_err());
    }

    #[test]
    fn calibrated_sigma_reproduces_ber() {
        let inst = PufInstance::new(PufConfig::default()).unwrap();
        let sigma = inst.calibrate_sigma(0.15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let ber = inst.estimate_ber(sigma, 400, &mut rng);
        assert!((ber - 0.15).abs() <= 0.01, "{ber}");
    }

    #[test]
    fn noisy_hd_matches_calibration() {
        // 1,000 noisy responses: mean HD to the noiseless response within 3σ of 0.15·n.
        let inst = PufInstance::new(PufConfig::default()).unwrap();
        let sigma = inst.calibrate_sigma(0.15).unwrap();
        let inst = inst.with_sigma(sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let trials = 1000;
        let mut total = 0usize;
        for _ in 0..trials {
            let rn = BitString::random(128, &mut rng).unwrap();
            let clean = inst.eval_response(&rn).unwrap();
            let noisy = inst.eval_response_noisy(&rn, &mut rng).unwrap();
            total += clean.hamming_distance(&noisy).unwrap();
        }
        let mean = total as f64 / trials as f64;
        let expected = 0.15 * 127.0;
        let sd_of_mean = (127.0 * 0.15 * 0.85 / trials as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sd_of_mean + 0.01 * 127.0, "{mean}");
    }

    #[test]
    fn ber_monotone_in_sigma() {
        let inst = PufInstance::new(PufConfig::default()).unwrap();
        let grid = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
        let bers: Vec<f64> = grid
            .iter()
            .map(|&s| inst.estimate_ber(s, 200, &mut ChaCha8Rng::seed_from_u64(9)))
            .collect();
        assert_eq!(bers[0], 0.0);
        for w in bers.windows(2) {
            assert!(w[1] >= w[0], "{bers:?}");
        }
    }

    #[test]
    fn inter_device_distance_near_half() {
        let a = PufInstance::new(PufConfig { device_seed: 1, ..Default::default() }).unwrap();
        let b = PufInstance::new(PufConfig { device_seed: 2, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let total: usize = (0..500)
            .map(|_| {
                let rn = BitString::random(128, &mut rng).unwrap();
                a.eval_response(&rn).unwrap().hamming_distance(&b.eval_response(&rn).unwrap()).unwrap()
            })
            .sum();
        let frac = total as f64 / (500.0 * 127.0);
        assert!((frac - 0.5).abs() <= 0.05, "{frac}");
    }
}
