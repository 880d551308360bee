//! Deterministic in-process deployment: one device, one server, a simulated
//! clock and a channel that can be tampered with.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SystemConfig;
use super::transport::{Direction, Transcript};
use crate::ecc::BchCode;
use crate::protocol::{
    decode_frame, encode_frame, enroll, Device, DeviceState, Enrollment, ErrorCode, Message, ProtocolError,
    RejectReason, Server,
};
use crate::puf::{PufError, PufInstance};
use crate::store::Database;

/// Upper bound on frames in one round; a sane exchange needs six.
const MAX_STEPS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error("database has no rows for device {0:#x}")]
    NotEnrolled(u64),
}

/// What the channel does with one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Deliver(Vec<u8>),
    Drop,
    /// Advance the clock before delivering.
    Delay(u64, Vec<u8>),
}

/// Adversary on the channel. Sees each frame once, in order.
pub trait FaultInjector {
    fn intercept(&mut self, dir: Direction, frame: Vec<u8>) -> Action;
}

impl<F: FnMut(Direction, Vec<u8>) -> Action> FaultInjector for F {
    fn intercept(&mut self, dir: Direction, frame: Vec<u8>) -> Action {
        self(dir, frame)
    }
}

/// Honest channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaults;

impl FaultInjector for NoFaults {
    fn intercept(&mut self, _dir: Direction, frame: Vec<u8>) -> Action {
        Action::Deliver(frame)
    }
}

/// Flips one field bit of the first frame carrying `tag`. Bit 0 is the MSB of
/// the first field byte.
#[derive(Debug, Clone, Copy)]
pub struct FlipBit {
    pub tag: u8,
    pub bit: usize,
    done: bool,
}

impl FlipBit {
    pub fn new(tag: u8, bit: usize) -> Self {
        Self { tag, bit, done: false }
    }
}

impl FaultInjector for FlipBit {
    fn intercept(&mut self, _dir: Direction, mut frame: Vec<u8>) -> Action {
        if !self.done && frame.get(4) == Some(&self.tag) {
            let i = 5 + self.bit / 8;
            if i < frame.len() {
                frame[i] ^= 0x80 >> (self.bit % 8);
                self.done = true;
            }
        }
        Action::Deliver(frame)
    }
}

/// Swaps the first frame carrying `tag` for a fixed one.
#[derive(Debug, Clone)]
pub struct ReplaceFrame {
    pub tag: u8,
    pub with: Vec<u8>,
    done: bool,
}

impl ReplaceFrame {
    pub fn new(tag: u8, with: Vec<u8>) -> Self {
        Self { tag, with, done: false }
    }

    pub fn message(msg: &Message) -> Self {
        Self::new(msg.tag(), encode_frame(msg).expect("well-formed message"))
    }
}

impl FaultInjector for ReplaceFrame {
    fn intercept(&mut self, _dir: Direction, frame: Vec<u8>) -> Action {
        if !self.done && frame.get(4) == Some(&self.tag) {
            self.done = true;
            return Action::Deliver(self.with.clone());
        }
        Action::Deliver(frame)
    }
}

/// Result of one simulated round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    /// Last `ERROR` code the device sent, if any.
    pub device_error: Option<ErrorCode>,
    /// PUF evaluations during this round.
    pub puf_invocations: u64,
    pub transcript: Transcript,
}

/// One enrolled device and its server, driven step by step.
#[derive(Debug)]
pub struct Testbed {
    config: SystemConfig,
    device: Device,
    server: Server,
    noiseless: PufInstance,
    device_rng: ChaCha8Rng,
    server_rng: ChaCha8Rng,
    clock_ms: u64,
}

impl Testbed {
    /// Enrolls the configured device into a fresh database.
    pub fn enrolled(config: SystemConfig) -> Result<(Self, Enrollment), SimError> {
        let (db, enrollment) = enroll_system(&config)?;
        let state = enrollment.device_state.clone();
        Ok((Self::from_parts(config, db, state)?, enrollment))
    }

    pub fn new(config: SystemConfig) -> Result<Self, SimError> {
        Ok(Self::enrolled(config)?.0)
    }

    /// Attaches to an existing database and device state.
    pub fn from_parts(config: SystemConfig, db: Database, state: DeviceState) -> Result<Self, SimError> {
        if db.row_count(state.id) == 0 {
            return Err(SimError::NotEnrolled(state.id));
        }
        let puf = PufInstance::new(config.puf.clone())?;
        let noiseless = puf.clone().with_sigma(0.0)?;
        let device = Device::new(config.protocol.clone(), puf, state)?;
        let server = Server::new(
            Arc::new(db),
            &config.master(),
            Arc::new(BchCode::standard()),
            config.protocol.clone(),
        )?;
        Ok(Self {
            device_rng: ChaCha8Rng::seed_from_u64(config.seeds.device),
            server_rng: ChaCha8Rng::seed_from_u64(config.seeds.server),
            config,
            device,
            server,
            noiseless,
            clock_ms: 0,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.device
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn advance_clock(&mut self, ms: u64) {
        self.clock_ms = self.clock_ms.saturating_add(ms);
    }

    /// Calibrates device noise to `ber` and returns the sigma used.
    pub fn set_ber(&mut self, ber: f64) -> Result<f64, SimError> {
        let sigma = self.noiseless.calibrate_sigma(ber)?;
        self.device.set_puf(self.noiseless.clone().with_sigma(sigma)?);
        Ok(sigma)
    }

    pub fn set_sigma(&mut self, sigma: f64) -> Result<(), SimError> {
        self.device.set_puf(self.noiseless.clone().with_sigma(sigma)?);
        Ok(())
    }

    /// Sends the admin token directly to the device. True if it is now unlocked.
    pub fn unlock(&mut self) -> bool {
        let token = self.config.protocol.admin_token;
        self.device.handle(&Message::Unlock { token }, self.clock_ms, &mut self.device_rng);
        !self.device.is_locked()
    }

    /// Hands a message straight to the device, bypassing the server.
    pub fn deliver_to_device(&mut self, msg: &Message) -> Option<Message> {
        self.device.handle(msg, self.clock_ms, &mut self.device_rng)
    }

    pub fn run_round(&mut self) -> RoundOutcome {
        self.run_round_with(&mut NoFaults)
    }

    /// One full server-initiated round with every frame passing through `faults`.
    pub fn run_round_with(&mut self, faults: &mut dyn FaultInjector) -> RoundOutcome {
        let before = self.device.puf_invocations();
        let mut session = self.server.session();
        let mut transcript = Transcript::default();
        let mut device_error = None;
        let mut queue = VecDeque::new();
        queue.push_back((Direction::ToDevice, encode(&session.start())));

        let mut steps = 0;
        while let Some((dir, frame)) = queue.pop_front() {
            steps += 1;
            if steps > MAX_STEPS {
                break;
            }
            let frame = match faults.intercept(dir, frame) {
                Action::Drop => continue,
                Action::Deliver(f) => f,
                Action::Delay(ms, f) => {
                    self.advance_clock(ms);
                    f
                }
            };
            transcript.push(dir, &frame);
            match dir {
                Direction::ToDevice => {
                    let reply = match decode_frame(&frame) {
                        Ok(msg) => self.device.handle(&msg, self.clock_ms, &mut self.device_rng),
                        Err(_) => Some(Message::Error { code: ErrorCode::MALFORMED }),
                    };
                    if let Some(reply) = reply {
                        if let Message::Error { code } = reply {
                            device_error = Some(code);
                        }
                        queue.push_back((Direction::ToServer, encode(&reply)));
                    }
                }
                Direction::ToServer => {
                    let replies = match decode_frame(&frame) {
                        Ok(msg) => session.handle(&msg, &mut self.server_rng),
                        Err(_) => session.malformed(),
                    };
                    queue.extend(replies.iter().map(|m| (Direction::ToDevice, encode(m))));
                }
            }
        }
        session.abort();
        RoundOutcome {
            accepted: session.accepted() == Some(true),
            reason: session.reject_reason(),
            device_error,
            puf_invocations: self.device.puf_invocations() - before,
            transcript,
        }
    }

    /// Honest rounds at the current noise level. Returns the accepted fraction.
    pub fn run_rounds(&mut self, rounds: usize) -> f64 {
        if rounds == 0 {
            return 1.0;
        }
        let accepted = (0..rounds).filter(|_| self.run_round().accepted).count();
        accepted as f64 / rounds as f64
    }
}

fn encode(msg: &Message) -> Vec<u8> {
    encode_frame(msg).expect("protocol messages are well-formed")
}

/// Enrolls the configured device with its noiseless PUF.
pub fn enroll_system(config: &SystemConfig) -> Result<(Database, Enrollment), SimError> {
    let puf = PufInstance::new(config.puf.clone())?.with_sigma(0.0)?;
    let enrollment = enroll(
        &config.protocol,
        &puf,
        &BchCode::standard(),
        &config.master(),
        config.device_id,
        &mut ChaCha8Rng::seed_from_u64(config.seeds.enroll),
        &mut ChaCha8Rng::seed_from_u64(config.seeds.seal),
    )?;
    let mut db = Database::new();
    enrollment.install(&mut db)?;
    Ok((db, enrollment))
}

/// Calibrates to `ber`, then runs `rounds` honest rounds on a fresh testbed.
pub fn run_rounds(config: &SystemConfig, rounds: usize, ber: f64) -> Result<f64, SimError> {
    let mut bed = Testbed::new(config.clone())?;
    bed.set_ber(ber)?;
    Ok(bed.run_rounds(rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::frame::tag;

    fn small() -> Testbed {
        Testbed::new(SystemConfig::default().with_m(9)).unwrap()
    }

    #[test]
    fn honest_round_has_six_frames() {
        let mut bed = small();
        let out = bed.run_round();
        assert!(out.accepted, "{:?}", out.reason);
        let seen: Vec<u8> = out.transcript.frames.iter().map(|(_, f)| f[4]).collect();
        assert_eq!(seen, [tag::INIT, tag::AUTH1, tag::NONCE, tag::CHALLENGE, tag::RESPONSE, tag::RESULT]);
        assert_eq!(out.puf_invocations, 1);
    }

    #[test]
    fn flipped_challenge_is_voided_without_puf() {
        let mut bed = small();
        let out = bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, 5));
        assert!(!out.accepted);
        assert_eq!(out.device_error, Some(ErrorCode::VOIDED));
        assert_eq!(out.reason, Some(RejectReason::DeviceAborted));
        assert_eq!(out.puf_invocations, 0);
        assert!(bed.run_round().accepted);
    }

    #[test]
    fn late_challenge_is_voided() {
        let mut bed = small();
        let tau = bed.config().protocol.tau_ms;
        let mut delay = |_d: Direction, f: Vec<u8>| {
            if f[4] == tag::CHALLENGE {
                Action::Delay(tau + 1, f)
            } else {
                Action::Deliver(f)
            }
        };
        let out = bed.run_round_with(&mut delay);
        assert_eq!(out.device_error, Some(ErrorCode::VOIDED));
        assert_eq!(out.puf_invocations, 0);
    }

    #[test]
    fn dropped_response_times_out() {
        let mut bed = small();
        let mut drop = |_d: Direction, f: Vec<u8>| {
            if f[4] == tag::RESPONSE {
                Action::Drop
            } else {
                Action::Deliver(f)
            }
        };
        let out = bed.run_round_with(&mut drop);
        assert_eq!(out.reason, Some(RejectReason::Timeout));
    }

    #[test]
    fn not_enrolled_is_an_error() {
        let cfg = SystemConfig::default().with_m(9);
        let state = DeviceState::new(cfg.device_id, &cfg.protocol);
        assert!(matches!(Testbed::from_parts(cfg, Database::new(), state), Err(SimError::NotEnrolled(_))));
    }
}
