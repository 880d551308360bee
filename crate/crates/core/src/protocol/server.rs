use std::sync::Arc;

use rand::RngCore;

use super::frame::Message;
use super::{draw_balanced, ProtocolConfig, ProtocolError};
use crate::bitstring::{balance_check, BitString};
use crate::ecc::{BchCode, HelperData};
use crate::shuffler::{deshuffle, shuffle};
use crate::store::{derive_keys, prf_index, CipherKeys, Database, MasterSecret, Record};

/// Why a session ended in rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    UnknownDevice,
    UnbalancedNonce,
    UnknownIndex,
    TamperedRow,
    DecodeFailure,
    ResponseMismatch,
    DeviceAborted,
    ProtocolViolation,
    Timeout,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::UnknownDevice => "unknown_device",
            RejectReason::UnbalancedNonce => "unbalanced_nonce",
            RejectReason::UnknownIndex => "unknown_index",
            RejectReason::TamperedRow => "tampered_row",
            RejectReason::DecodeFailure => "decode_failure",
            RejectReason::ResponseMismatch => "response_mismatch",
            RejectReason::DeviceAborted => "device_aborted",
            RejectReason::ProtocolViolation => "protocol_violation",
            RejectReason::Timeout => "timeout",
        }
    }
}

/// Shared server context. Cloning is cheap; the database is read-only here.
#[derive(Debug, Clone)]
pub struct Server {
    db: Arc<Database>,
    keys: CipherKeys,
    code: Arc<BchCode>,
    config: ProtocolConfig,
}

impl Server {
    pub fn new(
        db: Arc<Database>,
        master: &MasterSecret,
        code: Arc<BchCode>,
        config: ProtocolConfig,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        Ok(Self { db, keys: derive_keys(master), code, config })
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    pub fn session(&self) -> ServerSession {
        ServerSession {
            server: self.clone(),
            phase: SessionPhase::Start,
            device_id: None,
            n_s: None,
            record: None,
            outcome: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    Start,
    AwaitAuth1,
    AwaitResponse,
    Done,
}

/// One authentication round from the server's side. Holds no `Counter_1`
/// and never sees an unshuffled challenge.
#[derive(Debug, Clone)]
pub struct ServerSession {
    server: Server,
    phase: SessionPhase,
    device_id: Option<u64>,
    n_s: Option<BitString>,
    record: Option<Record>,
    outcome: Option<Result<(), RejectReason>>,
}

impl ServerSession {
    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn device_id(&self) -> Option<u64> {
        self.device_id
    }

    /// `Some(true)` once accepted, `Some(false)` once rejected.
    pub fn accepted(&self) -> Option<bool> {
        self.outcome.map(|o| o.is_ok())
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        self.outcome.and_then(|o| o.err())
    }

    pub fn is_done(&self) -> bool {
        self.phase == SessionPhase::Done
    }

    pub fn start(&mut self) -> Message {
        self.phase = SessionPhase::AwaitAuth1;
        Message::Init
    }

    /// Ends the session without a reply from the device.
    pub fn abort(&mut self) {
        if !self.is_done() {
            self.reject(RejectReason::Timeout);
        }
    }

    /// Handles an undecodable frame from the device.
    pub fn malformed(&mut self) -> Vec<Message> {
        if self.is_done() {
            return Vec::new();
        }
        self.reject(RejectReason::ProtocolViolation)
    }

    fn reject(&mut self, reason: RejectReason) -> Vec<Message> {
        self.phase = SessionPhase::Done;
        self.outcome = Some(Err(reason));
        vec![Message::Result { accept: false }]
    }

    pub fn handle<R: RngCore + ?Sized>(&mut self, msg: &Message, rng: &mut R) -> Vec<Message> {
        match (self.phase, msg) {
            (SessionPhase::Done, _) => Vec::new(),
            (SessionPhase::AwaitAuth1, Message::Auth1 { id, even_shuffled, n_d }) => {
                self.on_auth1(*id, even_shuffled, n_d, rng)
            }
            (SessionPhase::AwaitResponse, Message::Response { r_shuffle }) => {
                vec![self.on_response(r_shuffle)]
            }
            (SessionPhase::AwaitResponse | SessionPhase::AwaitAuth1, Message::Error { .. }) => {
                self.reject(RejectReason::DeviceAborted)
            }
            _ => self.reject(RejectReason::ProtocolViolation),
        }
    }

    /// Verifies the device's opening message and issues `NONCE` then `CHALLENGE`.
    pub fn on_auth1<R: RngCore + ?Sized>(
        &mut self,
        id: u64,
        even_shuffled: &BitString,
        n_d: &BitString,
        rng: &mut R,
    ) -> Vec<Message> {
        let server = &self.server;
        if !server.db.is_registered(id) {
            return self.reject(RejectReason::UnknownDevice);
        }
        self.device_id = Some(id);
        if !balance_check(n_d) {
            return self.reject(RejectReason::UnbalancedNonce);
        }
        let n_s = draw_balanced(server.config.nonce_len, rng);
        let token = match prf_index(server.keys.index, even_shuffled) {
            Ok(t) => t,
            Err(_) => return self.reject(RejectReason::ProtocolViolation),
        };
        let row = match server.db.get(id, &token) {
            Ok(Some(row)) => row,
            _ => return self.reject(RejectReason::UnknownIndex),
        };
        let record = match row.open_record(&server.keys) {
            Ok(r) => r,
            Err(_) => return self.reject(RejectReason::TamperedRow),
        };
        let n_ds = shuffle(n_d, record.counter2);
        let n_ss = shuffle(&n_s, record.counter2);
        let x = record
            .shuffled_challenge
            .xor(&n_ds)
            .and_then(|v| v.xor(&n_ss))
            .expect("128-bit fields");
        self.n_s = Some(n_s.clone());
        self.record = Some(record);
        self.phase = SessionPhase::AwaitResponse;
        vec![Message::Nonce { n_s }, Message::Challenge { x }]
    }

    /// Unmasks and corrects the noisy response, then compares with the enrolled one.
    pub fn on_response(&mut self, r_shuffle: &BitString) -> Message {
        let (Some(record), Some(n_s)) = (self.record.as_ref(), self.n_s.as_ref()) else {
            return self.reject(RejectReason::ProtocolViolation).remove(0);
        };
        let code = &self.server.code;
        let mask = n_s.truncate(code.n()).expect("nonce covers the response");
        let noisy = deshuffle(r_shuffle, record.counter2).xor(&mask).expect("same width");
        let enrolled = deshuffle(&record.shuffled_response, record.counter2);
        let help = HelperData { mask: record.helper.clone() };
        let verdict = match code.recover(&help, &noisy) {
            Ok(corrected) if corrected == enrolled => Ok(()),
            Ok(_) => Err(RejectReason::ResponseMismatch),
            Err(_) => Err(RejectReason::DecodeFailure),
        };
        self.phase = SessionPhase::Done;
        self.outcome = Some(verdict);
        Message::Result { accept: verdict.is_ok() }
    }
}
