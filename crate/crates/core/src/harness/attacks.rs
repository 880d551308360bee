//! Channel adversaries: tampering, brute force against the device gate, replay.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SystemConfig;
use super::report::Report;
use super::sim::{FlipBit, ReplaceFrame, SimError, Testbed};
use crate::bitstring::BitString;
use crate::protocol::frame::tag;
use crate::protocol::{decode_frame, ErrorCode, Message};

/// Seed offset for adversary randomness, kept apart from the protocol RNGs.
const ADVERSARY_SEED: u64 = 0xA77A_C4E5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    Mitm,
    Bruteforce,
    Replay,
}

impl AttackMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMode::Mitm => "mitm",
            AttackMode::Bruteforce => "bruteforce",
            AttackMode::Replay => "replay",
        }
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mitm" => Ok(AttackMode::Mitm),
            "bruteforce" => Ok(AttackMode::Bruteforce),
            "replay" => Ok(AttackMode::Replay),
            other => Err(format!("unknown attack mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub mode: AttackMode,
    /// Adversarial sessions run (controls excluded).
    pub trials: u64,
    pub accepts_by_server: u64,
    /// PUF evaluations during sessions whose challenge path was tampered with.
    pub puf_invocations_on_device: u64,
    pub lockout_triggered: bool,
    /// Consecutive failures that produced the first lockout.
    pub lockout_after: Option<u32>,
    /// Honest control rounds all accepted.
    pub control_accepted: bool,
    pub elapsed: Duration,
    /// Scenario-specific counters.
    pub details: Vec<(String, String)>,
}

impl AttackReport {
    fn new(mode: AttackMode) -> Self {
        Self {
            mode,
            trials: 0,
            accepts_by_server: 0,
            puf_invocations_on_device: 0,
            lockout_triggered: false,
            lockout_after: None,
            control_accepted: true,
            elapsed: Duration::ZERO,
            details: Vec::new(),
        }
    }

    fn detail(&mut self, key: &str, value: impl fmt::Display) {
        self.details.push((key.to_string(), value.to_string()));
    }

    /// Zero accepts, zero gated PUF calls, and every control went through.
    /// Brute force additionally requires the lockout to fire at `omega`.
    pub fn passed(&self, omega: u32) -> bool {
        let base = self.accepts_by_server == 0 && self.puf_invocations_on_device == 0 && self.control_accepted;
        match self.mode {
            AttackMode::Bruteforce => base && self.lockout_after == Some(omega),
            _ => base,
        }
    }

    pub fn to_report(&self, omega: u32) -> Report {
        let mut r = Report::new();
        r.kv("mode", self.mode);
        r.kv("trials", self.trials);
        r.kv("accepts_by_server", self.accepts_by_server);
        r.kv("puf_invocations_on_device", self.puf_invocations_on_device);
        r.kv("lockout_triggered", self.lockout_triggered);
        r.kv("lockout_after", self.lockout_after.map_or("none".to_string(), |n| n.to_string()));
        r.kv("control_accepted", self.control_accepted);
        for (k, v) in &self.details {
            r.kv(k, v);
        }
        r.kv("elapsed_ms", self.elapsed.as_millis());
        r.set_pass(self.passed(omega));
        r
    }
}

pub fn run_attack(config: &SystemConfig, mode: AttackMode, trials: u64) -> Result<AttackReport, SimError> {
    match mode {
        AttackMode::Mitm => attack_mitm(config, trials),
        AttackMode::Bruteforce => attack_bruteforce(config, trials),
        AttackMode::Replay => attack_replay(config, trials),
    }
}

fn random_bits(len: usize, rng: &mut ChaCha8Rng) -> BitString {
    BitString::random(len, rng).expect("valid width")
}

/// Unlocks through the admin channel if the device locked itself.
fn relock_guard(bed: &mut Testbed, report: &mut AttackReport, lockouts: &mut u64) {
    if bed.device().is_locked() {
        report.lockout_triggered = true;
        *lockouts += 1;
        bed.unlock();
    }
}

/// Tampers with `CHALLENGE`, `NONCE` and `RESPONSE` in transit.
///
/// Runs every single-bit `CHALLENGE` flip, then `trials` random `X`
/// replacements, `trials` random `RESPONSE` substitutions and `trials`
/// single-bit `NONCE` flips, bracketed by passthrough controls.
pub fn attack_mitm(config: &SystemConfig, trials: u64) -> Result<AttackReport, SimError> {
    let start = Instant::now();
    let mut report = AttackReport::new(AttackMode::Mitm);
    let mut bed = Testbed::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.server ^ ADVERSARY_SEED);
    let mut lockouts = 0u64;
    let nonce_len = config.protocol.nonce_len;

    report.control_accepted &= bed.run_round().accepted;

    let mut comparator_false = 0u64;
    for bit in 0..nonce_len {
        let out = bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, bit));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        report.puf_invocations_on_device += out.puf_invocations;
        comparator_false += (out.device_error == Some(ErrorCode::VOIDED)) as u64;
        relock_guard(&mut bed, &mut report, &mut lockouts);
    }
    report.detail("challenge_bit_flips", nonce_len);
    report.detail("challenge_bit_flips_voided", comparator_false);

    let mut replaced_voided = 0u64;
    for _ in 0..trials {
        let x = random_bits(nonce_len, &mut rng);
        let out = bed.run_round_with(&mut ReplaceFrame::message(&Message::Challenge { x }));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        report.puf_invocations_on_device += out.puf_invocations;
        replaced_voided += (out.device_error == Some(ErrorCode::VOIDED)) as u64;
        relock_guard(&mut bed, &mut report, &mut lockouts);
    }
    report.detail("challenge_replacements", trials);
    report.detail("challenge_replacements_voided", replaced_voided);

    let mut nonce_voided = 0u64;
    for _ in 0..trials {
        let bit = (rng.next_u32() as usize) % nonce_len;
        let out = bed.run_round_with(&mut FlipBit::new(tag::NONCE, bit));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        report.puf_invocations_on_device += out.puf_invocations;
        nonce_voided += (out.device_error == Some(ErrorCode::VOIDED)) as u64;
        relock_guard(&mut bed, &mut report, &mut lockouts);
    }
    report.detail("nonce_bit_flips", trials);
    report.detail("nonce_bit_flips_voided", nonce_voided);

    // The challenge is honest here, so the device legitimately evaluates its PUF.
    let mut response_puf = 0u64;
    for _ in 0..trials {
        let r_shuffle = random_bits(config.protocol.response_len, &mut rng);
        let out = bed.run_round_with(&mut ReplaceFrame::message(&Message::Response { r_shuffle }));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        response_puf += out.puf_invocations;
        relock_guard(&mut bed, &mut report, &mut lockouts);
    }
    report.detail("response_substitutions", trials);
    report.detail("response_substitution_puf_calls", response_puf);

    report.control_accepted &= bed.run_round().accepted;
    report.detail("admin_unlocks", lockouts);
    report.elapsed = start.elapsed();
    Ok(report)
}

/// Feeds random `X` values to the device after an honest `NONCE` until
/// `trials` guesses have been made, unlocking through the admin channel
/// whenever the gate locks.
pub fn attack_bruteforce(config: &SystemConfig, trials: u64) -> Result<AttackReport, SimError> {
    let start = Instant::now();
    let mut report = AttackReport::new(AttackMode::Bruteforce);
    let mut bed = Testbed::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.device ^ ADVERSARY_SEED);
    let nonce_len = config.protocol.nonce_len;
    let mut lockouts = 0u64;
    let mut streak = 0u32;
    let mut checked_lock_contract = false;

    for _ in 0..trials {
        let x = random_bits(nonce_len, &mut rng);
        let out = bed.run_round_with(&mut ReplaceFrame::message(&Message::Challenge { x }));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        report.puf_invocations_on_device += out.puf_invocations;
        streak += 1;
        if bed.device().is_locked() {
            report.lockout_triggered = true;
            lockouts += 1;
            if report.lockout_after.is_none() {
                report.lockout_after = Some(streak);
            } else if report.lockout_after != Some(streak) {
                report.detail("inconsistent_lockout_streak", streak);
                report.lockout_after = Some(u32::MAX);
            }
            streak = 0;
            if !checked_lock_contract {
                checked_lock_contract = true;
                let honest = bed.run_round();
                let refused = !honest.accepted && honest.device_error == Some(ErrorCode::LOCKED);
                report.detail("locked_device_refuses_init", refused);
                report.control_accepted &= refused && honest.puf_invocations == 0;
                let wrong = bed.deliver_to_device(&Message::Unlock { token: !config.protocol.admin_token });
                let still_locked = bed.device().is_locked();
                report.detail("wrong_token_keeps_lock", still_locked);
                report.control_accepted &= still_locked && wrong == Some(Message::Error { code: ErrorCode::BAD_TOKEN });
                bed.unlock();
                let ok = bed.run_round().accepted;
                report.detail("honest_round_after_unlock", ok);
                report.control_accepted &= ok;
            } else {
                bed.unlock();
            }
        }
    }
    report.detail("admin_unlocks", lockouts);
    report.elapsed = start.elapsed();
    Ok(report)
}

/// Replays recorded honest traffic against fresh server sessions.
///
/// Each iteration records one honest round, then tries a full replay of its
/// `AUTH1` and `RESPONSE`, then an `AUTH1`-only replay spliced into a live
/// device round, then runs an honest control.
pub fn attack_replay(config: &SystemConfig, trials: u64) -> Result<AttackReport, SimError> {
    let start = Instant::now();
    let mut report = AttackReport::new(AttackMode::Replay);
    let mut bed = Testbed::new(config.clone())?;
    let mut full_rejects = 0u64;
    let mut auth1_rejects = 0u64;

    for _ in 0..trials.max(1) {
        let recorded = bed.run_round();
        report.control_accepted &= recorded.accepted;
        let (Some(auth1), Some(response)) =
            (recorded.transcript.find(tag::AUTH1), recorded.transcript.find(tag::RESPONSE))
        else {
            report.control_accepted = false;
            continue;
        };
        let (auth1, response) = (auth1.to_vec(), response.to_vec());

        let accepted = replay_as_device(&mut bed, &[auth1.clone(), response]);
        report.trials += 1;
        report.accepts_by_server += accepted as u64;
        full_rejects += (!accepted) as u64;

        let out = bed.run_round_with(&mut ReplaceFrame::new(tag::AUTH1, auth1));
        report.trials += 1;
        report.accepts_by_server += out.accepted as u64;
        // The device has already moved past the replayed pair.
        report.puf_invocations_on_device += out.puf_invocations;
        auth1_rejects += (!out.accepted) as u64;
        if bed.device().is_locked() {
            report.lockout_triggered = true;
            bed.unlock();
        }

        report.control_accepted &= bed.run_round().accepted;
    }
    report.detail("full_replays_rejected", full_rejects);
    report.detail("auth1_replays_rejected", auth1_rejects);
    report.elapsed = start.elapsed();
    Ok(report)
}

/// Plays a scripted device against a fresh server session: after `INIT`, each
/// server turn is answered with the next recorded frame. Returns the verdict.
fn replay_as_device(bed: &mut Testbed, script: &[Vec<u8>]) -> bool {
    let mut script = script.iter();
    let mut session = bed.server().session();
    let mut rng = ChaCha8Rng::seed_from_u64(bed.clock_ms() ^ ADVERSARY_SEED);
    session.start();
    while !session.is_done() {
        let Some(frame) = script.next() else {
            session.abort();
            break;
        };
        match decode_frame(frame) {
            Ok(msg) => session.handle(&msg, &mut rng),
            Err(_) => session.malformed(),
        };
    }
    session.accepted() == Some(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default().with_m(99)
    }

    #[test]
    fn mitm_small_run() {
        let r = attack_mitm(&cfg(), 20).unwrap();
        assert_eq!(r.trials, 128 + 60);
        assert!(r.passed(10), "{r:?}");
        assert!(r.lockout_triggered);
    }

    #[test]
    fn bruteforce_locks_at_omega() {
        let r = attack_bruteforce(&cfg(), 35).unwrap();
        assert_eq!(r.lockout_after, Some(10));
        assert!(r.passed(10), "{r:?}");
    }

    #[test]
    fn replay_rejected() {
        let r = attack_replay(&cfg(), 3).unwrap();
        assert_eq!(r.trials, 6);
        assert!(r.passed(10), "{r:?}");
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("replay".parse::<AttackMode>().unwrap(), AttackMode::Replay);
        assert!("dos".parse::<AttackMode>().is_err());
    }
}
