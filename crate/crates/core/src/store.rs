//! The server's CRP database.
//!
//! Each row pairs a deterministic index token (a keyed PRF of the shuffled
//! even RN) with a sealed payload holding `Counter_2 ∥ S ∥ Rs ∥ Help`. The
//! cipher suite is a simulation-grade construction built from SplitMix64:
//!
//! * keys: `K_idx, K_enc, K_mac` are the first three outputs of a stream
//!   seeded with the folded master secret;
//! * PRF: start from the key, absorb each big-endian 64-bit word `w` as
//!   `state = splitmix_next(state ^ w).0`, then squeeze two outputs;
//! * seal: random 64-bit nonce, keystream of big-endian outputs from the
//!   stream seeded `K_enc ^ nonce`, tag = PRF under `K_mac` over
//!   `nonce ∥ ciphertext` (final partial word zero-padded).
//!
//! The suite id byte in the file header identifies this construction.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::RngCore;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::bitstring::{BitError, BitString};
use crate::prng::{splitmix_next, Prng64, RN_BITS};

pub const MAGIC: &[u8; 4] = b"PRLA";
pub const FILE_VERSION: u8 = 1;
pub const SUITE_SPLITMIX: u8 = 1;

pub const INDEX_LEN: usize = 16;
pub const NONCE_LEN: usize = 8;
pub const PAYLOAD_LEN: usize = 56;
pub const TAG_LEN: usize = 16;
pub const ROW_LEN: usize = INDEX_LEN + NONCE_LEN + PAYLOAD_LEN + TAG_LEN;

/// Bit width of stored responses and helper masks.
pub const RESPONSE_BITS: usize = 127;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown device {0:#018x}")]
    UnknownDevice(u64),
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("payload is {0} bytes, expected {PAYLOAD_LEN}")]
    PayloadLength(usize),
    #[error("corrupt database: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Bits(#[from] BitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Server root secret. Never written into the database file.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct MasterSecret(pub u128);

impl MasterSecret {
    pub fn from_hex(hex: &str) -> Result<Self, BitError> {
        let bits = BitString::from_hex(hex, 128)?;
        Ok(Self(bits.to_u128().expect("128 bits")))
    }

    pub fn to_hex(&self) -> String {
        format!("{:032x}", self.0)
    }
}

impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterSecret(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherKeys {
    pub index: u64,
    pub enc: u64,
    pub mac: u64,
}

pub fn derive_keys(ms: &MasterSecret) -> CipherKeys {
    let mut prng = Prng64::new((ms.0 >> 64) as u64 ^ ms.0 as u64);
    CipherKeys { index: prng.next_u64(), enc: prng.next_u64(), mac: prng.next_u64() }
}

fn prf_words(key: u64, words: impl IntoIterator<Item = u64>) -> [u8; 16] {
    let state = words.into_iter().fold(key, |s, w| splitmix_next(s ^ w).0);
    Prng64::new(state).next_u128().to_be_bytes()
}

fn be_words(bytes: &[u8]) -> impl Iterator<Item = u64> + '_ {
    bytes.chunks(8).map(|c| {
        let mut w = [0u8; 8];
        w[..c.len()].copy_from_slice(c);
        u64::from_be_bytes(w)
    })
}

/// Deterministic index token for a shuffled even RN.
pub fn prf_index(key: u64, x: &BitString) -> Result<[u8; 16], StoreError> {
    if x.len() != RN_BITS {
        return Err(BitError::LengthMismatch { left: x.len(), right: RN_BITS }.into());
    }
    Ok(prf_words(key, be_words(x.as_bytes())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub nonce: u64,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

fn keystream_xor(key: u64, nonce: u64, data: &mut [u8]) {
    let mut prng = Prng64::new(key ^ nonce);
    for chunk in data.chunks_mut(8) {
        let ks = prng.next_u64().to_be_bytes();
        chunk.iter_mut().zip(ks).for_each(|(b, k)| *b ^= k);
    }
}

fn mac(key: u64, nonce: u64, ciphertext: &[u8]) -> [u8; TAG_LEN] {
    prf_words(key, std::iter::once(nonce).chain(be_words(ciphertext)))
}

pub fn seal<R: RngCore + ?Sized>(keys: &CipherKeys, plaintext: &[u8], rng: &mut R) -> Sealed {
    let nonce = rng.next_u64();
    let mut ciphertext = plaintext.to_vec();
    keystream_xor(keys.enc, nonce, &mut ciphertext);
    let tag = mac(keys.mac, nonce, &ciphertext);
    Sealed { nonce, ciphertext, tag }
}

/// Verifies the tag, then decrypts.
pub fn open(keys: &CipherKeys, sealed: &Sealed) -> Result<Vec<u8>, StoreError> {
    let expected = mac(keys.mac, sealed.nonce, &sealed.ciphertext);
    if !bool::from(expected.ct_eq(&sealed.tag)) {
        return Err(StoreError::TagMismatch);
    }
    let mut plaintext = sealed.ciphertext.clone();
    keystream_xor(keys.enc, sealed.nonce, &mut plaintext);
    Ok(plaintext)
}

/// Plaintext enrollment record for one CRP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub counter2: u64,
    /// Odd RN shuffled under `Counter_1`.
    pub shuffled_challenge: BitString,
    /// PUF response shuffled under `Counter_2`.
    pub shuffled_response: BitString,
    pub helper: BitString,
}

impl Record {
    pub fn to_bytes(&self) -> [u8; PAYLOAD_LEN] {
        let mut out = [0u8; PAYLOAD_LEN];
        out[..8].copy_from_slice(&self.counter2.to_be_bytes());
        out[8..24].copy_from_slice(self.shuffled_challenge.as_bytes());
        out[24..40].copy_from_slice(self.shuffled_response.as_bytes());
        out[40..56].copy_from_slice(self.helper.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() != PAYLOAD_LEN {
            return Err(StoreError::PayloadLength(bytes.len()));
        }
        Ok(Self {
            counter2: u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes")),
            shuffled_challenge: BitString::from_bytes(&bytes[8..24], RN_BITS)?,
            shuffled_response: BitString::from_bytes(&bytes[24..40], RESPONSE_BITS)?,
            helper: BitString::from_bytes(&bytes[40..56], RESPONSE_BITS)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbRow {
    pub index_key: [u8; INDEX_LEN],
    pub nonce: u64,
    pub ciphertext: [u8; PAYLOAD_LEN],
    pub tag: [u8; TAG_LEN],
}

impl DbRow {
    pub fn seal_record<R: RngCore + ?Sized>(
        keys: &CipherKeys,
        index_key: [u8; INDEX_LEN],
        record: &Record,
        rng: &mut R,
    ) -> Self {
        let sealed = seal(keys, &record.to_bytes(), rng);
        Self {
            index_key,
            nonce: sealed.nonce,
            ciphertext: sealed.ciphertext.try_into().expect("fixed payload"),
            tag: sealed.tag,
        }
    }

    pub fn open_record(&self, keys: &CipherKeys) -> Result<Record, StoreError> {
        let sealed = Sealed { nonce: self.nonce, ciphertext: self.ciphertext.to_vec(), tag: self.tag };
        Record::from_bytes(&open(keys, &sealed)?)
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.index_key);
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
    }

    fn read(bytes: &[u8]) -> Self {
        Self {
            index_key: bytes[..16].try_into().expect("16"),
            nonce: u64::from_be_bytes(bytes[16..24].try_into().expect("8")),
            ciphertext: bytes[24..80].try_into().expect("56"),
            tag: bytes[80..96].try_into().expect("16"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Database {
    devices: BTreeMap<u64, BTreeMap<[u8; INDEX_LEN], DbRow>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| StoreError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8")))
    }
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, device_id: u64) {
        self.devices.entry(device_id).or_default();
    }

    pub fn is_registered(&self, device_id: u64) -> bool {
        self.devices.contains_key(&device_id)
    }

    pub fn device_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.devices.keys().copied()
    }

    pub fn put(&mut self, device_id: u64, row: DbRow) -> Result<(), StoreError> {
        let rows = self.devices.get_mut(&device_id).ok_or(StoreError::UnknownDevice(device_id))?;
        rows.insert(row.index_key, row);
        Ok(())
    }

    pub fn get(&self, device_id: u64, index_key: &[u8; INDEX_LEN]) -> Result<Option<&DbRow>, StoreError> {
        let rows = self.devices.get(&device_id).ok_or(StoreError::UnknownDevice(device_id))?;
        Ok(rows.get(index_key))
    }

    pub fn rows(&self, device_id: u64) -> impl Iterator<Item = &DbRow> + '_ {
        self.devices.get(&device_id).into_iter().flat_map(|r| r.values())
    }

    pub fn row_count(&self, device_id: u64) -> usize {
        self.devices.get(&device_id).map_or(0, BTreeMap::len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.devices.values().map(BTreeMap::len).sum();
        let mut out = Vec::with_capacity(10 + self.devices.len() * 12 + total * ROW_LEN);
        out.extend_from_slice(MAGIC);
        out.push(FILE_VERSION);
        out.push(SUITE_SPLITMIX);
        out.extend_from_slice(&(self.devices.len() as u32).to_be_bytes());
        for (id, rows) in &self.devices {
            out.extend_from_slice(&id.to_be_bytes());
            out.extend_from_slice(&(rows.len() as u32).to_be_bytes());
            rows.values().for_each(|r| r.write(&mut out));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4)? != MAGIC {
            return Err(StoreError::Corrupt("bad magic".into()));
        }
        let version = rd.take(1)?[0];
        if version != FILE_VERSION {
            return Err(StoreError::Corrupt(format!("unsupported version {version}")));
        }
        let suite = rd.take(1)?[0];
        if suite != SUITE_SPLITMIX {
            return Err(StoreError::Corrupt(format!("unsupported cipher suite {suite}")));
        }
        let mut db = Self::new();
        for _ in 0..rd.u32()? {
            let id = rd.u64()?;
            db.register(id);
            for _ in 0..rd.u32()? {
                db.put(id, DbRow::read(rd.take(ROW_LEN)?))?;
            }
        }
        if rd.pos != bytes.len() {
            return Err(StoreError::Corrupt(format!("{} trailing bytes", bytes.len() - rd.pos)));
        }
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sample_record(r: &mut ChaCha8Rng) -> Record {
        Record {
            counter2: r.random(),
            shuffled_challenge: BitString::random(128, r).unwrap(),
            shuffled_response: BitString::random(127, r).unwrap(),
            helper: BitString::random(127, r).unwrap(),
        }
    }

    #[test]
    fn key_derivation() {
        let ms = MasterSecret(0xabcdef);
        assert_eq!(derive_keys(&ms), derive_keys(&ms));
        let k = derive_keys(&MasterSecret(0));
        let (s1, o1) = splitmix_next(0);
        let (s2, o2) = splitmix_next(s1);
        let (_, o3) = splitmix_next(s2);
        assert_eq!(k, CipherKeys { index: o1, enc: o2, mac: o3 });
        assert_eq!(k.index, 0xE220_A839_7B1D_CDAF);
        let mut r = rng(1);
        for _ in 0..1000 {
            let (a, b) = (MasterSecret(r.random()), MasterSecret(r.random()));
            assert_ne!(derive_keys(&a).index, derive_keys(&b).index);
        }
        assert_eq!(format!("{:?}", ms), "MasterSecret(..)");
    }

    #[test]
    fn prf_index_properties() {
        let mut r = rng(2);
        for _ in 0..1000 {
            let key: u64 = r.random();
            let x = BitString::random(128, &mut r).unwrap();
            let t = prf_index(key, &x).unwrap();
            assert_eq!(t, prf_index(key, &x).unwrap());
            let mut y = x.clone();
            y.flip(r.random_range(0..128));
            assert_ne!(t, prf_index(key, &y).unwrap());
            assert_ne!(t, prf_index(key ^ (1 + r.random::<u64>() % u64::MAX), &x).unwrap());
        }
        assert!(prf_index(1, &BitString::zeros(64).unwrap()).is_err());
    }

    #[test]
    fn seal_open() {
        let keys = derive_keys(&MasterSecret(77));
        let mut r = rng(3);
        for _ in 0..1000 {
            let mut p = [0u8; PAYLOAD_LEN];
            r.fill(&mut p);
            let s = seal(&keys, &p, &mut r);
            assert_eq!(open(&keys, &s).unwrap(), p);
        }
        let p = [7u8; PAYLOAD_LEN];
        let a = seal(&keys, &p, &mut r);
        let b = seal(&keys, &p, &mut r);
        assert_ne!(a.ciphertext, b.ciphertext);
        for bit in 0..PAYLOAD_LEN * 8 {
            let mut t = a.clone();
            t.ciphertext[bit / 8] ^= 0x80 >> (bit % 8);
            assert!(matches!(open(&keys, &t), Err(StoreError::TagMismatch)), "bit {bit}");
        }
        let mut t = a.clone();
        t.nonce ^= 1;
        assert!(open(&keys, &t).is_err());
        let other = derive_keys(&MasterSecret(78));
        assert!(open(&other, &a).is_err());
    }

    #[test]
    fn record_layout() {
        let mut r = rng(4);
        let rec = sample_record(&mut r);
        let bytes = rec.to_bytes();
        assert_eq!(&bytes[..8], &rec.counter2.to_be_bytes());
        assert_eq!(Record::from_bytes(&bytes).unwrap(), rec);
        assert!(matches!(Record::from_bytes(&bytes[..55]), Err(StoreError::PayloadLength(55))));
    }

    #[test]
    fn put_get() {
        let keys = derive_keys(&MasterSecret(5));
        let mut r = rng(5);
        let mut db = Database::new();
        let rec = sample_record(&mut r);
        let idx = prf_index(keys.index, &BitString::random(128, &mut r).unwrap()).unwrap();
        let row = DbRow::seal_record(&keys, idx, &rec, &mut r);
        assert!(matches!(db.put(9, row.clone()), Err(StoreError::UnknownDevice(9))));
        db.register(9);
        db.put(9, row.clone()).unwrap();
        assert_eq!(db.get(9, &idx).unwrap(), Some(&row));
        assert_eq!(db.get(9, &[0; 16]).unwrap(), None);
        assert!(db.get(10, &idx).is_err());
        assert_eq!(db.get(9, &idx).unwrap().unwrap().open_record(&keys).unwrap(), rec);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let keys = derive_keys(&MasterSecret(6));
        let mut r = rng(6);
        let mut db = Database::new();
        db.register(1);
        db.register(0xFEED);
        for id in [1, 0xFEED] {
            let idx = prf_index(keys.index, &BitString::random(128, &mut r).unwrap()).unwrap();
            db.put(id, DbRow::seal_record(&keys, idx, &sample_record(&mut r), &mut r)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.bin");
        db.save(&path).unwrap();
        let loaded = Database::load(&path).unwrap();
        assert_eq!(loaded, db);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(bytes.len(), 10 + 2 * 12 + 2 * ROW_LEN);
        assert!(Database::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Database::from_bytes(&bad), Err(StoreError::Corrupt(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(Database::from_bytes(&extra).is_err());
    }
}
