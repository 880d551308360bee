//! PUF population quality: uniqueness, reliability, randomness.

use rand::RngCore;
use thiserror::Error;

use super::report::Report;
use crate::bitstring::BitString;
use crate::prng::RnStream;
use crate::protocol::ProtocolConfig;
use crate::puf::{PufConfig, PufError, PufInstance};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("uniqueness needs at least two instances, got {0}")]
    TooFewInstances(usize),
    #[error("no challenges supplied")]
    NoChallenges,
    #[error("no samples requested")]
    NoSamples,
    #[error("instance {instance} has {actual} responses, expected {expected}")]
    Ragged { instance: usize, expected: usize, actual: usize },
    #[error("response widths differ")]
    Width,
    #[error(transparent)]
    Puf(#[from] PufError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub uniqueness_pct: f64,
    pub reliability_pct: f64,
    pub randomness_pct: f64,
    /// Instances.
    pub r: usize,
    /// Challenges per instance.
    pub v: usize,
    /// Response bits.
    pub n: usize,
    /// Noisy samples per challenge.
    pub l: usize,
    pub ber: f64,
}

impl MetricsReport {
    pub fn to_report(&self) -> Report {
        let mut r = Report::new();
        r.kv("instances", self.r);
        r.kv("crps", self.v);
        r.kv("response_bits", self.n);
        r.kv("samples", self.l);
        r.kv("ber", self.ber);
        r.kv("uniqueness_pct", format!("{:.4}", self.uniqueness_pct));
        r.kv("reliability_pct", format!("{:.4}", self.reliability_pct));
        r.kv("randomness_pct", format!("{:.4}", self.randomness_pct));
        let in_range = |x: f64| (0.0..=100.0).contains(&x);
        r.set_pass(in_range(self.uniqueness_pct) && in_range(self.reliability_pct) && in_range(self.randomness_pct));
        r
    }
}

/// Average pairwise inter-instance distance. `responses[p][i]` is instance
/// `p`'s response to challenge `i`; exactly `v` terms per pair are summed.
pub fn uniqueness_from_responses(responses: &[Vec<BitString>]) -> Result<f64, MetricsError> {
    let r = responses.len();
    if r < 2 {
        return Err(MetricsError::TooFewInstances(r));
    }
    let v = responses[0].len();
    if v == 0 {
        return Err(MetricsError::NoChallenges);
    }
    for (p, rs) in responses.iter().enumerate() {
        if rs.len() != v {
            return Err(MetricsError::Ragged { instance: p, expected: v, actual: rs.len() });
        }
    }
    let n = responses[0][0].len();
    let mut total = 0u64;
    for p in 0..r {
        for q in p + 1..r {
            for i in 0..v {
                total += responses[p][i].hamming_distance(&responses[q][i]).map_err(|_| MetricsError::Width)? as u64;
            }
        }
    }
    Ok(2.0 * total as f64 / (n * v * r * (r - 1)) as f64 * 100.0)
}

/// `100 − mean fractional distance` between each reference response and its
/// noisy samples. `noisy[i]` holds the samples for `clean[i]`.
pub fn reliability_from_samples(clean: &[BitString], noisy: &[Vec<BitString>]) -> Result<f64, MetricsError> {
    let v = clean.len();
    if v == 0 {
        return Err(MetricsError::NoChallenges);
    }
    if noisy.len() != v {
        return Err(MetricsError::Ragged { instance: 0, expected: v, actual: noisy.len() });
    }
    let l = noisy[0].len();
    if l == 0 {
        return Err(MetricsError::NoSamples);
    }
    let n = clean[0].len();
    let mut total = 0u64;
    for (i, (c, samples)) in clean.iter().zip(noisy).enumerate() {
        if samples.len() != l {
            return Err(MetricsError::Ragged { instance: i, expected: l, actual: samples.len() });
        }
        for s in samples {
            total += c.hamming_distance(s).map_err(|_| MetricsError::Width)? as u64;
        }
    }
    Ok(100.0 - total as f64 / (v * n * l) as f64 * 100.0)
}

/// Share of one bits, in percent.
pub fn randomness_from_responses(responses: &[BitString]) -> Result<f64, MetricsError> {
    let bits: usize = responses.iter().map(BitString::len).sum();
    if bits == 0 {
        return Err(MetricsError::NoChallenges);
    }
    let ones: usize = responses.iter().map(BitString::popcount).sum();
    Ok(ones as f64 / bits as f64 * 100.0)
}

fn clean_responses(instance: &PufInstance, challenges: &[BitString]) -> Result<Vec<BitString>, MetricsError> {
    Ok(challenges.iter().map(|c| instance.eval_response(c)).collect::<Result<_, _>>()?)
}

pub fn metric_uniqueness(instances: &[PufInstance], challenges: &[BitString]) -> Result<f64, MetricsError> {
    if instances.len() < 2 {
        return Err(MetricsError::TooFewInstances(instances.len()));
    }
    let responses = instances
        .iter()
        .map(|p| clean_responses(p, challenges))
        .collect::<Result<Vec<_>, _>>()?;
    uniqueness_from_responses(&responses)
}

/// Reliability with noise calibrated to `ber`.
pub fn metric_reliability<R: RngCore + ?Sized>(
    instance: &PufInstance,
    challenges: &[BitString],
    samples: usize,
    ber: f64,
    rng: &mut R,
) -> Result<f64, MetricsError> {
    let quiet = instance.clone().with_sigma(0.0)?;
    let noisy_inst = quiet.clone().with_sigma(quiet.calibrate_sigma(ber)?)?;
    let clean = clean_responses(&quiet, challenges)?;
    let noisy = challenges
        .iter()
        .map(|c| (0..samples).map(|_| noisy_inst.eval_response_noisy(c, rng)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    reliability_from_samples(&clean, &noisy)
}

pub fn metric_randomness(instance: &PufInstance, challenges: &[BitString]) -> Result<f64, MetricsError> {
    randomness_from_responses(&clean_responses(instance, challenges)?)
}

/// `r` instances that differ only in device seed.
pub fn population(base: &PufConfig, r: usize) -> Result<Vec<PufInstance>, MetricsError> {
    (0..r as u64)
        .map(|i| {
            let cfg = PufConfig { device_seed: base.device_seed.wrapping_add(i), sigma_noise: 0.0, ..base.clone() };
            Ok(PufInstance::new(cfg)?)
        })
        .collect()
}

/// The first `v` odd-indexed RNs of the configured stream, wrapping if needed.
pub fn odd_challenges(config: &ProtocolConfig, v: usize) -> Vec<BitString> {
    let stream = RnStream::new(&config.seed_bits(), config.m).expect("validated config");
    (0..v as u64).map(|i| stream.rn_at(2 * (i % config.pairs()) + 1)).collect()
}

/// All three metrics over a population built from `puf`. Reliability is
/// measured on the first instance; randomness pools every instance.
pub fn run_metrics<R: RngCore + ?Sized>(
    protocol: &ProtocolConfig,
    puf: &PufConfig,
    instances: usize,
    crps: usize,
    samples: usize,
    ber: f64,
    rng: &mut R,
) -> Result<MetricsReport, MetricsError> {
    if samples == 0 {
        return Err(MetricsError::NoSamples);
    }
    let pop = population(puf, instances)?;
    let challenges = odd_challenges(protocol, crps);
    let responses = pop.iter().map(|p| clean_responses(p, &challenges)).collect::<Result<Vec<_>, _>>()?;
    let uniqueness_pct = uniqueness_from_responses(&responses)?;
    let pooled: Vec<BitString> = responses.into_iter().flatten().collect();
    let randomness_pct = randomness_from_responses(&pooled)?;
    let reliability_pct = metric_reliability(&pop[0], &challenges, samples, ber, rng)?;
    Ok(MetricsReport {
        uniqueness_pct,
        reliability_pct,
        randomness_pct,
        r: instances,
        v: crps,
        n: puf.response_len,
        l: samples,
        ber,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitString {
        BitString::from_bin_str(s).unwrap()
    }

    #[test]
    fn uniqueness_edge_cases() {
        let a = vec![bits("1100"), bits("1010")];
        let comp: Vec<_> = a.iter().map(BitString::complement).collect();
        assert_eq!(uniqueness_from_responses(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(uniqueness_from_responses(&[a.clone(), comp]).unwrap(), 100.0);
        assert!(matches!(uniqueness_from_responses(&[a]), Err(MetricsError::TooFewInstances(1))));
    }

    #[test]
    fn uniqueness_three_instances_by_hand() {
        // Pairwise distances over one 4-bit challenge: 1, 2, 3 -> 2*6/(4*1*3*2).
        let r = [vec![bits("0000")], vec![bits("1000")], vec![bits("1110")]];
        let u = uniqueness_from_responses(&r).unwrap();
        assert!((u - 50.0).abs() < 1e-12);
    }

    #[test]
    fn reliability_thirteen_flips() {
        let clean = BitString::zeros(127).unwrap();
        let mut noisy = clean.clone();
        for i in 0..13 {
            noisy.flip(i * 9);
        }
        let r = reliability_from_samples(&[clean], &[vec![noisy]]).unwrap();
        assert!((r - 100.0 * (1.0 - 13.0 / 127.0)).abs() < 1e-12);
        assert!((r - 89.76).abs() < 0.01);
    }

    #[test]
    fn randomness_synthetic() {
        assert_eq!(randomness_from_responses(&[BitString::ones(127).unwrap()]).unwrap(), 100.0);
        let alt: Vec<bool> = (0..128).map(|i| i % 2 == 0).collect();
        assert_eq!(randomness_from_responses(&[BitString::from_bits(&alt).unwrap()]).unwrap(), 50.0);
    }

    #[test]
    fn identical_seeds_are_indistinguishable() {
        let one = PufInstance::new(PufConfig::default()).unwrap();
        let ch = odd_challenges(&ProtocolConfig::default(), 5);
        assert_eq!(metric_uniqueness(&[one.clone(), one], &ch).unwrap(), 0.0);
    }

    #[test]
    fn zero_ber_is_fully_reliable() {
        let p = PufInstance::new(PufConfig::default()).unwrap();
        let ch = odd_challenges(&ProtocolConfig::default(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(metric_reliability(&p, &ch, 3, 0.0, &mut rng).unwrap(), 100.0);
    }

    #[test]
    fn odd_challenges_come_from_the_stream() {
        let cfg = ProtocolConfig { m: 5, ..Default::default() };
        let ch = odd_challenges(&cfg, 4);
        let mut s = RnStream::new(&cfg.seed_bits(), 5).unwrap();
        s.next_rn();
        assert_eq!(ch[0], s.next_rn());
        assert_eq!(ch[3], ch[0]);
    }
}
