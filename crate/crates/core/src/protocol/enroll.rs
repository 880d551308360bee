use rand::RngCore;

use super::{DeviceState, ProtocolConfig, ProtocolError};
use crate::bitstring::BitString;
use crate::ecc::BchCode;
use crate::prng::RnStream;
use crate::puf::PufInstance;
use crate::shuffler::shuffle;
use crate::store::{derive_keys, prf_index, Database, DbRow, MasterSecret, Record};

/// Output of an offline enrollment run.
#[derive(Debug, Clone)]
pub struct Enrollment {
    pub device_id: u64,
    pub rows: Vec<DbRow>,
    /// Pre-seal records, one per row, in pair order.
    pub records: Vec<Record>,
    /// Shuffled even RNs `N_is`, one per row, in pair order.
    pub shuffled_even: Vec<BitString>,
    pub device_state: DeviceState,
}

impl Enrollment {
    pub fn install(&self, db: &mut Database) -> Result<(), ProtocolError> {
        db.register(self.device_id);
        for row in &self.rows {
            db.put(self.device_id, row.clone())?;
        }
        Ok(())
    }
}

/// Runs enrollment in the secure environment.
///
/// For each pair `(N_2p, N_2p+1)` with shuffle keys `(Counter_1, Counter_2)`:
/// the index token is the PRF of `shuffle(N_2p, Counter_2)`, and the sealed
/// payload holds `Counter_2`, `shuffle(N_2p+1, Counter_1)`, the shuffled
/// noiseless response and its helper mask. Counters advance once per pair.
/// Helper masks draw from `helper_rng`, seal nonces from `seal_rng`.
pub fn enroll<R1, R2>(
    config: &ProtocolConfig,
    puf: &PufInstance,
    code: &BchCode,
    master: &MasterSecret,
    device_id: u64,
    helper_rng: &mut R1,
    seal_rng: &mut R2,
) -> Result<Enrollment, ProtocolError>
where
    R1: RngCore + ?Sized,
    R2: RngCore + ?Sized,
{
    config.validate()?;
    let keys = derive_keys(master);
    let mut stream = RnStream::new(&config.seed_bits(), config.m)?;
    let pairs = config.pairs() as usize;
    let mut out = Enrollment {
        device_id,
        rows: Vec::with_capacity(pairs),
        records: Vec::with_capacity(pairs),
        shuffled_even: Vec::with_capacity(pairs),
        device_state: DeviceState::new(device_id, config),
    };
    for pair in 0..pairs as u64 {
        let (counter1, counter2) = config.counters_for(pair);
        let even = stream.next_rn();
        let odd = stream.next_rn();

        let shuffled_even = shuffle(&even, counter2);
        let index_key = prf_index(keys.index, &shuffled_even)?;

        let response = puf.eval_response(&odd)?;
        let helper = code.helper_gen(&response, helper_rng)?;
        let record = Record {
            counter2,
            shuffled_challenge: shuffle(&odd, counter1),
            shuffled_response: shuffle(&response, counter2),
            helper: helper.mask,
        };
        out.rows.push(DbRow::seal_record(&keys, index_key, &record, seal_rng));
        out.records.push(record);
        out.shuffled_even.push(shuffled_even);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf::PufConfig;
    use crate::shuffler::deshuffle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(m: u64, helper_seed: u64, seal_seed: u64) -> Enrollment {
        let cfg = ProtocolConfig { m, ..Default::default() };
        let puf = PufInstance::new(PufConfig::default()).unwrap();
        enroll(
            &cfg,
            &puf,
            &BchCode::standard(),
            &MasterSecret(42),
            7,
            &mut ChaCha8Rng::seed_from_u64(helper_seed),
            &mut ChaCha8Rng::seed_from_u64(seal_seed),
        )
        .unwrap()
    }

    #[test]
    fn row_counts() {
        assert_eq!(run(3, 0, 0).rows.len(), 2);
        assert_eq!(run(9, 0, 0).rows.len(), 5);
    }

    #[test]
    fn plaintext_is_deterministic() {
        let a = run(9, 1, 2);
        let b = run(9, 1, 3);
        let bytes = |e: &Enrollment| e.records.iter().map(Record::to_bytes).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(a.rows[0].nonce, b.rows[0].nonce);
        assert_eq!(a.rows[0].index_key, b.rows[0].index_key);
    }

    #[test]
    fn records_decrypt_and_match_the_stream() {
        let e = run(9, 4, 5);
        let cfg = ProtocolConfig { m: 9, ..Default::default() };
        let keys = derive_keys(&MasterSecret(42));
        let mut db = Database::new();
        e.install(&mut db).unwrap();
        let stream = RnStream::new(&cfg.seed_bits(), 9).unwrap();
        for p in 0..5u64 {
            let (c1, c2) = cfg.counters_for(p);
            let token = prf_index(keys.index, &shuffle(&stream.rn_at(2 * p), c2)).unwrap();
            let rec = db.get(7, &token).unwrap().unwrap().open_record(&keys).unwrap();
            assert_eq!(rec, e.records[p as usize]);
            assert_eq!(rec.counter2, c2);
            assert_eq!(deshuffle(&rec.shuffled_challenge, c1), stream.rn_at(2 * p + 1));
        }
        assert_eq!(e.device_state.pair_index, 0);
        assert_eq!((e.device_state.counter1, e.device_state.counter2), (1, 2));
    }
}
