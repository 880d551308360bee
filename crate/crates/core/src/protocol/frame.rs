//! Wire frames: `len (4, big-endian) ∥ tag (1) ∥ fixed-width fields`, where
//! `len` counts the tag and the fields.

use thiserror::Error;

use crate::bitstring::BitString;

pub const HEADER_LEN: usize = 5;

pub mod tag {
    pub const INIT: u8 = 0x01;
    pub const AUTH1: u8 = 0x02;
    pub const NONCE: u8 = 0x03;
    pub const CHALLENGE: u8 = 0x04;
    pub const RESPONSE: u8 = 0x05;
    pub const RESULT: u8 = 0x06;
    pub const UNLOCK: u8 = 0x07;
    pub const ERROR: u8 = 0x08;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ErrorCode(pub u16);

impl ErrorCode {
    pub const LOCKED: Self = Self(1);
    pub const UNEXPECTED: Self = Self(2);
    pub const VOIDED: Self = Self(3);
    pub const BAD_TOKEN: Self = Self(4);
    pub const BUSY: Self = Self(5);
    pub const MALFORMED: Self = Self(6);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Init,
    Auth1 { id: u64, even_shuffled: BitString, n_d: BitString },
    Nonce { n_s: BitString },
    Challenge { x: BitString },
    Response { r_shuffle: BitString },
    Result { accept: bool },
    Unlock { token: u128 },
    Error { code: ErrorCode },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated: {0} bytes")]
    Truncated(usize),
    #[error("declared length {declared} but {actual} bytes follow the length prefix")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("tag {tag:#04x} expects {expected} body bytes, got {actual}")]
    BodyLength { tag: u8, expected: usize, actual: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("field width {actual} bits, expected {expected}")]
    FieldWidth { expected: usize, actual: usize },
}

fn body_len(t: u8) -> Option<usize> {
    Some(match t {
        tag::INIT => 0,
        tag::AUTH1 => 40,
        tag::NONCE | tag::CHALLENGE | tag::RESPONSE | tag::UNLOCK => 16,
        tag::RESULT => 1,
        tag::ERROR => 2,
        _ => return None,
    })
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Init => tag::INIT,
            Message::Auth1 { .. } => tag::AUTH1,
            Message::Nonce { .. } => tag::NONCE,
            Message::Challenge { .. } => tag::CHALLENGE,
            Message::Response { .. } => tag::RESPONSE,
            Message::Result { .. } => tag::RESULT,
            Message::Unlock { .. } => tag::UNLOCK,
            Message::Error { .. } => tag::ERROR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Init => "INIT",
            Message::Auth1 { .. } => "AUTH1",
            Message::Nonce { .. } => "NONCE",
            Message::Challenge { .. } => "CHALLENGE",
            Message::Response { .. } => "RESPONSE",
            Message::Result { .. } => "RESULT",
            Message::Unlock { .. } => "UNLOCK",
            Message::Error { .. } => "ERROR",
        }
    }
}

fn put_bits(out: &mut Vec<u8>, bits: &BitString, width: usize) -> Result<(), FrameError> {
    if bits.len() != width {
        return Err(FrameError::FieldWidth { expected: width, actual: bits.len() });
    }
    out.extend_from_slice(bits.as_bytes());
    Ok(())
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, FrameError> {
    let mut body = Vec::with_capacity(40);
    match msg {
        Message::Init => {}
        Message::Auth1 { id, even_shuffled, n_d } => {
            body.extend_from_slice(&id.to_be_bytes());
            put_bits(&mut body, even_shuffled, 128)?;
            put_bits(&mut body, n_d, 128)?;
        }
        Message::Nonce { n_s } => put_bits(&mut body, n_s, 128)?,
        Message::Challenge { x } => put_bits(&mut body, x, 128)?,
        Message::Response { r_shuffle } => put_bits(&mut body, r_shuffle, 127)?,
        Message::Result { accept } => body.push(*accept as u8),
        Message::Unlock { token } => body.extend_from_slice(&token.to_be_bytes()),
        Message::Error { code } => body.extend_from_slice(&code.0.to_be_bytes()),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&(1 + body.len() as u32).to_be_bytes());
    out.push(msg.tag());
    out.extend_from_slice(&body);
    Ok(out)
}

fn bits(bytes: &[u8], len: usize) -> Result<BitString, FrameError> {
    BitString::from_bytes(bytes, len).map_err(|e| FrameError::InvalidField(e.to_string()))
}

pub fn decode_frame(bytes: &[u8]) -> Result<Message, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let declared = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    if declared != bytes.len() - 4 {
        return Err(FrameError::LengthMismatch { declared, actual: bytes.len() - 4 });
    }
    let t = bytes[4];
    let body = &bytes[HEADER_LEN..];
    let expected = body_len(t).ok_or(FrameError::UnknownTag(t))?;
    if body.len() != expected {
        return Err(FrameError::BodyLength { tag: t, expected, actual: body.len() });
    }
    Ok(match t {
        tag::INIT => Message::Init,
        tag::AUTH1 => Message::Auth1 {
            id: u64::from_be_bytes(body[..8].try_into().expect("8 bytes")),
            even_shuffled: bits(&body[8..24], 128)?,
            n_d: bits(&body[24..40], 128)?,
        },
        tag::NONCE => Message::Nonce { n_s: bits(body, 128)? },
        tag::CHALLENGE => Message::Challenge { x: bits(body, 128)? },
        tag::RESPONSE => Message::Response { r_shuffle: bits(body, 127)? },
        tag::RESULT => match body[0] {
            0 => Message::Result { accept: false },
            1 => Message::Result { accept: true },
            v => return Err(FrameError::InvalidField(format!("result byte {v}"))),
        },
        tag::UNLOCK => Message::Unlock { token: u128::from_be_bytes(body.try_into().expect("16 bytes")) },
        tag::ERROR => Message::Error { code: ErrorCode(u16::from_be_bytes([body[0], body[1]])) },
        _ => unreachable!("tag validated above"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_bits(len: usize) -> impl Strategy<Value = BitString> {
        proptest::collection::vec(any::<bool>(), len).prop_map(|v| BitString::from_bits(&v).unwrap())
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            Just(Message::Init),
            (any::<u64>(), arb_bits(128), arb_bits(128))
                .prop_map(|(id, even_shuffled, n_d)| Message::Auth1 { id, even_shuffled, n_d }),
            arb_bits(128).prop_map(|n_s| Message::Nonce { n_s }),
            arb_bits(128).prop_map(|x| Message::Challenge { x }),
            arb_bits(127).prop_map(|r_shuffle| Message::Response { r_shuffle }),
            any::<bool>().prop_map(|accept| Message::Result { accept }),
            any::<u128>().prop_map(|token| Message::Unlock { token }),
            any::<u16>().prop_map(|c| Message::Error { code: ErrorCode(c) }),
        ]
    }

    proptest! {
        #[test]
        fn every_variant_round_trips(msg in arb_message()) {
            let frame = encode_frame(&msg).unwrap();
            prop_assert_eq!(frame.len(), HEADER_LEN + body_len(msg.tag()).unwrap());
            prop_assert_eq!(decode_frame(&frame).unwrap(), msg);
        }
    }

    #[test]
    fn init_layout() {
        assert_eq!(encode_frame(&Message::Init).unwrap(), vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn malformed_frames() {
        assert_eq!(decode_frame(&[0, 0, 0]), Err(FrameError::Truncated(3)));
        assert!(matches!(decode_frame(&[0, 0, 0, 2, 1]), Err(FrameError::LengthMismatch { .. })));
        assert_eq!(decode_frame(&[0, 0, 0, 1, 0x42]), Err(FrameError::UnknownTag(0x42)));
        assert!(matches!(decode_frame(&[0, 0, 0, 2, 1, 0]), Err(FrameError::BodyLength { .. })));
        assert!(decode_frame(&[0, 0, 0, 2, 6, 2]).is_err());
        let mut resp = encode_frame(&Message::Response { r_shuffle: BitString::zeros(127).unwrap() }).unwrap();
        *resp.last_mut().unwrap() = 1;
        assert!(matches!(decode_frame(&resp), Err(FrameError::InvalidField(_))));
        let wrong = Message::Nonce { n_s: BitString::zeros(127).unwrap() };
        assert!(encode_frame(&wrong).is_err());
    }
}
