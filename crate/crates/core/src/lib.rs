//! PUF-based lightweight mutual authentication.
//!
//! A software-modeled noisy PUF device and a server holding an encrypted CRP
//! database authenticate each other over an insecure channel. Challenges and
//! responses only ever travel shuffled and XOR-masked, the device refuses to
//! touch its PUF until the server has proven knowledge of the current
//! challenge, and noisy responses are corrected on the server with a BCH
//! code-offset construction.

pub mod bitstring;
pub mod ecc;
pub mod harness;
pub mod prng;
pub mod puf;
pub mod protocol;
pub mod shuffler;
pub mod store;

pub use bitstring::{balance_check, BitError, BitString};
