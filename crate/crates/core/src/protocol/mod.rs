//! Enrollment and the device/server authentication state machines.

mod device;
mod enroll;
pub mod frame;
mod server;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstring::{BitError, BitString};
use crate::ecc::EccError;
use crate::prng::PrngError;
use crate::puf::PufError;
use crate::store::StoreError;

pub use device::{Device, DeviceState, DEVICE_STATE_LEN};
pub use enroll::{enroll, Enrollment};
pub use frame::{decode_frame, encode_frame, ErrorCode, FrameError, Message};
pub use server::{RejectReason, Server, ServerSession, SessionPhase};

/// RN stream seed chosen so that every `N_0..=N_9999` passes the balance check.
pub const DEFAULT_SEED: u128 = 0x5eed_0000_0000_0000_0000_0000_0000_0001;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("corrupt device state: {0}")]
    DeviceState(String),
    #[error(transparent)]
    Bits(#[from] BitError),
    #[error(transparent)]
    Prng(#[from] PrngError),
    #[error(transparent)]
    Puf(#[from] PufError),
    #[error(transparent)]
    Ecc(#[from] EccError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub(crate) mod hex_u128 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 32 {
            return Err(D::Error::custom(format!("expected 32 hex digits, got {:?}", s)));
        }
        u128::from_str_radix(&s, 16).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    #[serde(with = "hex_u128")]
    pub seed: u128,
    /// Last RN ordinal; odd.
    pub m: u64,
    pub counter1_init: u64,
    pub counter2_init: u64,
    pub const1: u64,
    pub const2: u64,
    /// Response deadline after AUTH1 is sent.
    pub tau_ms: u64,
    /// Consecutive failures before lockout.
    pub omega: u32,
    /// Minimum wait between a failed round and the next INIT.
    pub fail_wait_ms: u64,
    pub nonce_len: usize,
    pub response_len: usize,
    /// Shared secret that authorizes UNLOCK.
    #[serde(with = "hex_u128")]
    pub admin_token: u128,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            m: 9999,
            counter1_init: 1,
            counter2_init: 2,
            const1: 3,
            const2: 5,
            tau_ms: 2000,
            omega: 10,
            fail_wait_ms: 0,
            nonce_len: 128,
            response_len: 127,
            admin_token: 0xad31_0000_0000_0000_0000_0000_0000_7001,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let fail = |s: &str| Err(ProtocolError::Config(s.into()));
        if self.m % 2 == 0 {
            return fail("m must be odd");
        }
        if self.const1 == 0 || self.const2 == 0 {
            return fail("counter increments must be at least 1");
        }
        if self.omega == 0 {
            return fail("omega must be at least 1");
        }
        if self.nonce_len != 128 {
            return fail("nonce_len must be 128");
        }
        if self.response_len != crate::ecc::CODE_LEN {
            return fail("response_len must equal the code length 127");
        }
        Ok(())
    }

    pub fn seed_bits(&self) -> BitString {
        BitString::from_u128(self.seed, 128).expect("128 bits")
    }

    /// Number of even/odd RN pairs before the stream wraps.
    pub fn pairs(&self) -> u64 {
        self.m / 2 + 1
    }

    /// Shuffle keys `(Counter_1, Counter_2)` for a pair ordinal.
    pub fn counters_for(&self, pair: u64) -> (u64, u64) {
        let p = pair % self.pairs();
        (
            self.counter1_init.wrapping_add(p.wrapping_mul(self.const1)),
            self.counter2_init.wrapping_add(p.wrapping_mul(self.const2)),
        )
    }
}

/// Draws random bit strings until one passes the balance check.
pub(crate) fn draw_balanced<R: rand::RngCore + ?Sized>(len: usize, rng: &mut R) -> BitString {
    loop {
        let n = BitString::random(len, rng).expect("valid nonce length");
        if crate::bitstring::balance_check(&n) {
            return n;
        }
    }
}
