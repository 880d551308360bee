use rand::RngCore;
use subtle::ConstantTimeEq;

use super::frame::{ErrorCode, Message};
use super::{draw_balanced, ProtocolConfig, ProtocolError};
use crate::bitstring::{balance_check, BitString};
use crate::prng::RnStream;
use crate::puf::PufInstance;
use crate::shuffler::{deshuffle, shuffle};

const STATE_MAGIC: &[u8; 4] = b"PRLD";
/// Serialized size of [`DeviceState`].
pub const DEVICE_STATE_LEN: usize = 4 + 8 + 8 + 8 + 8 + 4 + 1;

/// Persistent device-side protocol state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub id: u64,
    /// Rounds started since enrollment; the active pair is this modulo the pair count.
    pub pair_index: u64,
    pub counter1: u64,
    pub counter2: u64,
    pub fail_count: u32,
    pub locked: bool,
}

impl DeviceState {
    pub fn new(id: u64, config: &ProtocolConfig) -> Self {
        Self {
            id,
            pair_index: 0,
            counter1: config.counter1_init,
            counter2: config.counter2_init,
            fail_count: 0,
            locked: false,
        }
    }

    /// `"PRLD" ∥ id ∥ pair_index ∥ counter1 ∥ counter2 ∥ fail_count (u32) ∥ locked (u8)`,
    /// big-endian.
    pub fn to_bytes(&self) -> [u8; DEVICE_STATE_LEN] {
        let mut out = [0u8; DEVICE_STATE_LEN];
        out[..4].copy_from_slice(STATE_MAGIC);
        out[4..12].copy_from_slice(&self.id.to_be_bytes());
        out[12..20].copy_from_slice(&self.pair_index.to_be_bytes());
        out[20..28].copy_from_slice(&self.counter1.to_be_bytes());
        out[28..36].copy_from_slice(&self.counter2.to_be_bytes());
        out[36..40].copy_from_slice(&self.fail_count.to_be_bytes());
        out[40] = self.locked as u8;
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let bad = |s: String| Err(ProtocolError::DeviceState(s));
        if bytes.len() != DEVICE_STATE_LEN {
            return bad(format!("{} bytes, expected {DEVICE_STATE_LEN}", bytes.len()));
        }
        if &bytes[..4] != STATE_MAGIC {
            return bad("bad magic".into());
        }
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let locked = match bytes[40] {
            0 => false,
            1 => true,
            v => return bad(format!("lock flag {v}")),
        };
        Ok(Self {
            id: u64_at(4),
            pair_index: u64_at(12),
            counter1: u64_at(20),
            counter2: u64_at(28),
            fail_count: u32::from_be_bytes(bytes[36..40].try_into().expect("4 bytes")),
            locked,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitNonce,
    AwaitChallenge,
}

#[derive(Debug, Clone)]
struct Session {
    phase: Phase,
    n_ds: BitString,
    n_s: Option<BitString>,
    deadline_ms: u64,
}

/// The device: PUF, stream authentication gate and protocol state.
#[derive(Debug, Clone)]
pub struct Device {
    config: ProtocolConfig,
    puf: PufInstance,
    state: DeviceState,
    stream: RnStream,
    session: Option<Session>,
    puf_invocations: u64,
    last_failure_ms: Option<u64>,
}

impl Device {
    pub fn new(config: ProtocolConfig, puf: PufInstance, state: DeviceState) -> Result<Self, ProtocolError> {
        config.validate()?;
        if puf.config().response_len != config.response_len {
            return Err(ProtocolError::Config("PUF response width differs from protocol".into()));
        }
        let stream = RnStream::new(&config.seed_bits(), config.m)?;
        Ok(Self { config, puf, state, stream, session: None, puf_invocations: 0, last_failure_ms: None })
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn puf(&self) -> &PufInstance {
        &self.puf
    }

    pub fn set_puf(&mut self, puf: PufInstance) {
        self.puf = puf;
    }

    /// How many times the PUF has been evaluated since construction.
    pub fn puf_invocations(&self) -> u64 {
        self.puf_invocations
    }

    pub fn is_locked(&self) -> bool {
        self.state.locked
    }

    /// True while a round is in progress.
    pub fn in_session(&self) -> bool {
        self.session.is_some()
    }

    fn current_pair(&self) -> u64 {
        self.state.pair_index % self.config.pairs()
    }

    fn error(code: ErrorCode) -> Message {
        Message::Error { code }
    }

    /// Dispatches one inbound message. Returns the reply, if any.
    pub fn handle<R: RngCore + ?Sized>(&mut self, msg: &Message, now_ms: u64, rng: &mut R) -> Option<Message> {
        match msg {
            Message::Unlock { token } => return Some(self.on_unlock(*token)),
            Message::Result { .. } | Message::Error { .. } => return None,
            _ => {}
        }
        if self.state.locked {
            return Some(Self::error(ErrorCode::LOCKED));
        }
        match msg {
            Message::Init => Some(self.on_init(now_ms, rng)),
            Message::Nonce { n_s } => self.on_nonce(n_s, now_ms),
            Message::Challenge { x } => Some(self.on_challenge(x, now_ms, rng)),
            _ => Some(Self::error(ErrorCode::UNEXPECTED)),
        }
    }

    /// Starts a round: draws a balanced `n_d` and announces the shuffled even RN.
    pub fn on_init<R: RngCore + ?Sized>(&mut self, now_ms: u64, rng: &mut R) -> Message {
        if self.state.locked {
            return Self::error(ErrorCode::LOCKED);
        }
        if let Some(t) = self.last_failure_ms {
            if now_ms < t.saturating_add(self.config.fail_wait_ms) {
                return Self::error(ErrorCode::BUSY);
            }
        }
        if self.session.is_some() {
            // An abandoned round counts as a failure before a new one starts.
            self.fail_round(now_ms);
            if self.state.locked {
                return Self::error(ErrorCode::LOCKED);
            }
        }
        let n_d = draw_balanced(self.config.nonce_len, rng);
        let even = self.stream.rn_at(2 * self.current_pair());
        let counter2 = self.state.counter2;
        self.session = Some(Session {
            phase: Phase::AwaitNonce,
            n_ds: shuffle(&n_d, counter2),
            n_s: None,
            deadline_ms: now_ms.saturating_add(self.config.tau_ms),
        });
        Message::Auth1 { id: self.state.id, even_shuffled: shuffle(&even, counter2), n_d }
    }

    fn expired(&self, now_ms: u64) -> bool {
        self.session.as_ref().is_some_and(|s| now_ms > s.deadline_ms)
    }

    /// Accepts the server nonce; `None` means the device now waits for the challenge.
    pub fn on_nonce(&mut self, n_s: &BitString, now_ms: u64) -> Option<Message> {
        match &self.session {
            Some(s) if s.phase == Phase::AwaitNonce => {}
            _ => return Some(Self::error(ErrorCode::UNEXPECTED)),
        }
        if self.expired(now_ms) || n_s.len() != self.config.nonce_len || !balance_check(n_s) {
            return Some(self.void(now_ms));
        }
        let session = self.session.as_mut().expect("checked above");
        session.n_s = Some(n_s.clone());
        session.phase = Phase::AwaitChallenge;
        None
    }

    /// Stream authentication: recover the challenge from `X`, compare against
    /// the device's own odd RN, and only then evaluate the PUF.
    pub fn on_challenge<R: RngCore + ?Sized>(&mut self, x: &BitString, now_ms: u64, rng: &mut R) -> Message {
        let session = match &self.session {
            Some(s) if s.phase == Phase::AwaitChallenge => s.clone(),
            _ => return Self::error(ErrorCode::UNEXPECTED),
        };
        if self.expired(now_ms) || x.len() != self.config.nonce_len {
            return self.void(now_ms);
        }
        let n_s = session.n_s.expect("set in AwaitChallenge");
        let (counter1, counter2) = (self.state.counter1, self.state.counter2);
        let n_ss = shuffle(&n_s, counter2);
        let odd = self.stream.rn_at(2 * self.current_pair() + 1);
        let s = x.xor(&session.n_ds).and_then(|v| v.xor(&n_ss)).expect("128-bit fields");
        let candidate = deshuffle(&s, counter1);
        if candidate != odd {
            return self.void(now_ms);
        }

        self.puf_invocations += 1;
        let noisy = self.puf.eval_response_noisy(&candidate, rng).expect("128-bit challenge");
        let mask = n_s.truncate(self.config.response_len).expect("response fits in nonce");
        let r_shuffle = shuffle(&noisy.xor(&mask).expect("same width"), counter2);
        self.state.fail_count = 0;
        self.session = None;
        self.advance();
        Message::Response { r_shuffle }
    }

    pub fn on_unlock(&mut self, token: u128) -> Message {
        let ok: bool = token.to_be_bytes().ct_eq(&self.config.admin_token.to_be_bytes()).into();
        if !ok {
            return Self::error(ErrorCode::BAD_TOKEN);
        }
        self.state.locked = false;
        self.state.fail_count = 0;
        self.last_failure_ms = None;
        Message::Result { accept: true }
    }

    /// Abandons the current round without touching the PUF.
    fn void(&mut self, now_ms: u64) -> Message {
        self.fail_round(now_ms);
        Self::error(ErrorCode::VOIDED)
    }

    fn fail_round(&mut self, now_ms: u64) {
        self.session = None;
        self.state.fail_count += 1;
        self.last_failure_ms = Some(now_ms);
        if self.state.fail_count >= self.config.omega {
            self.state.locked = true;
        }
        self.advance();
    }

    /// Moves to the next RN pair, reseeding after the last one.
    fn advance(&mut self) {
        self.state.pair_index += 1;
        if self.state.pair_index % self.config.pairs() == 0 {
            self.state.counter1 = self.config.counter1_init;
            self.state.counter2 = self.config.counter2_init;
        } else {
            self.state.counter1 = self.state.counter1.wrapping_add(self.config.const1);
            self.state.counter2 = self.state.counter2.wrapping_add(self.config.const2);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf::PufConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn device(m: u64) -> Device {
        let cfg = ProtocolConfig { m, ..Default::default() };
        let state = DeviceState::new(0xABCD, &cfg);
        Device::new(cfg, PufInstance::new(PufConfig::default()).unwrap(), state).unwrap()
    }

    #[test]
    fn state_file_round_trip() {
        let s = DeviceState { id: 9, pair_index: 3, counter1: 10, counter2: 17, fail_count: 2, locked: true };
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), DEVICE_STATE_LEN);
        assert_eq!(DeviceState::from_bytes(&bytes).unwrap(), s);
        assert!(DeviceState::from_bytes(&bytes[1..]).is_err());
        let mut bad = bytes;
        bad[40] = 7;
        assert!(DeviceState::from_bytes(&bad).is_err());
    }

    #[test]
    fn first_auth1_uses_n0_and_counter2() {
        let mut d = device(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let Message::Auth1 { id, even_shuffled, n_d } = d.on_init(0, &mut rng) else { panic!() };
        assert_eq!(id, 0xABCD);
        assert!(balance_check(&n_d));
        let n0 = RnStream::new(&d.config().seed_bits(), 9).unwrap().next_rn();
        assert_eq!(deshuffle(&even_shuffled, 2), n0);
    }

    #[test]
    fn locked_device_refuses_everything_but_unlock() {
        let mut d = device(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        d.state.locked = true;
        assert_eq!(d.handle(&Message::Init, 0, &mut rng), Some(Message::Error { code: ErrorCode::LOCKED }));
        let wrong = Message::Unlock { token: 1 };
        assert_eq!(d.handle(&wrong, 0, &mut rng), Some(Message::Error { code: ErrorCode::BAD_TOKEN }));
        assert!(d.is_locked());
        let right = Message::Unlock { token: d.config().admin_token };
        assert_eq!(d.handle(&right, 0, &mut rng), Some(Message::Result { accept: true }));
        assert!(!d.is_locked());
        assert_eq!(d.handle(&right, 0, &mut rng), Some(Message::Result { accept: true }));
        assert!(matches!(d.handle(&Message::Init, 0, &mut rng), Some(Message::Auth1 { .. })));
    }

    #[test]
    fn unbalanced_or_late_nonce_voids() {
        let mut d = device(9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        d.on_init(0, &mut rng);
        let zeros = BitString::zeros(128).unwrap();
        assert_eq!(d.on_nonce(&zeros, 1), Some(Message::Error { code: ErrorCode::VOIDED }));
        assert_eq!(d.state().fail_count, 1);
        assert_eq!(d.state().pair_index, 1);

        d.on_init(10, &mut rng);
        let n_s = draw_balanced(128, &mut rng);
        assert_eq!(d.on_nonce(&n_s, 10 + 2001), Some(Message::Error { code: ErrorCode::VOIDED }));
        assert_eq!(d.state().fail_count, 2);
        assert_eq!(d.puf_invocations(), 0);
    }

    #[test]
    fn out_of_phase_messages_are_rejected() {
        let mut d = device(9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = BitString::zeros(128).unwrap();
        assert_eq!(d.on_challenge(&x, 0, &mut rng), Message::Error { code: ErrorCode::UNEXPECTED });
        assert_eq!(d.on_nonce(&x, 0), Some(Message::Error { code: ErrorCode::UNEXPECTED }));
        assert_eq!(d.state().fail_count, 0);
    }

    #[test]
    fn wraps_counters_after_last_pair() {
        let mut d = device(3);
        d.advance();
        assert_eq!((d.state.counter1, d.state.counter2), (4, 7));
        d.advance();
        assert_eq!(d.state.pair_index, 2);
        assert_eq!((d.state.counter1, d.state.counter2), (1, 2));
        assert_eq!(d.current_pair(), 0);
    }
}
