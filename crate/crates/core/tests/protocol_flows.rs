use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pufrla_core::bitstring::BitString;
use pufrla_core::harness::{FlipBit, ReplaceFrame, SystemConfig, Testbed};
use pufrla_core::prng::RnStream;
use pufrla_core::protocol::frame::tag;
use pufrla_core::protocol::{ErrorCode, Message, RejectReason};
use pufrla_core::shuffler::{deshuffle, shuffle};
use pufrla_core::store::{derive_keys, prf_index};

fn bed(m: u64) -> Testbed {
    Testbed::new(SystemConfig::default().with_m(m)).unwrap()
}

/// Recomputes the index token the device should present and checks that the
/// sealed row carries the device's current `Counter_2`.
fn assert_counters_in_sync(bed: &Testbed) {
    let cfg = bed.config();
    let state = bed.device().state();
    let pair = state.pair_index % cfg.protocol.pairs();
    assert_eq!(cfg.protocol.counters_for(pair), (state.counter1, state.counter2));
    let stream = RnStream::new(&cfg.protocol.seed_bits(), cfg.protocol.m).unwrap();
    let keys = derive_keys(&cfg.master());
    let token = prf_index(keys.index, &shuffle(&stream.rn_at(2 * pair), state.counter2)).unwrap();
    let row = bed.server().database().get(cfg.device_id, &token).unwrap().expect("row for current pair");
    let rec = row.open_record(&keys).unwrap();
    assert_eq!(rec.counter2, state.counter2);
    assert_eq!(deshuffle(&rec.shuffled_challenge, state.counter1), stream.rn_at(2 * pair + 1));
}

#[test]
fn every_single_bit_challenge_flip_fails_the_comparator() {
    let mut bed = bed(99);
    for bit in 0..128 {
        let out = bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, bit));
        assert_eq!(out.device_error, Some(ErrorCode::VOIDED), "bit {bit}");
        assert_eq!(out.puf_invocations, 0);
        assert!(!out.accepted);
        if bed.device().is_locked() {
            assert!(bed.unlock());
        }
    }
    assert_eq!(bed.device().puf_invocations(), 0);
}

#[test]
fn random_challenges_fail_the_comparator() {
    let mut bed = bed(99);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..500 {
        let x = BitString::random(128, &mut rng).unwrap();
        let out = bed.run_round_with(&mut ReplaceFrame::message(&Message::Challenge { x }));
        assert_eq!(out.puf_invocations, 0);
        assert!(!out.accepted);
        bed.unlock();
    }
}

#[test]
fn wrap_around_round_authenticates() {
    let mut bed = bed(9);
    let pairs = bed.config().protocol.pairs();
    for round in 0..(pairs + 3) {
        let out = bed.run_round();
        assert!(out.accepted, "round {round}: {:?}", out.reason);
        assert_counters_in_sync(&bed);
    }
    let s = bed.device().state();
    assert_eq!(s.pair_index, pairs + 3);
    assert_eq!((s.counter1, s.counter2), bed.config().protocol.counters_for(3));
}

#[test]
fn voided_rounds_never_block_the_next_honest_one() {
    let mut bed = bed(9);
    for i in 0..12 {
        let voided = bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, i * 7));
        assert!(!voided.accepted);
        let honest = bed.run_round();
        assert!(honest.accepted, "after void {i}: {:?}", honest.reason);
    }
}

#[test]
fn replayed_response_is_rejected() {
    let mut bed = bed(99);
    let first = bed.run_round();
    assert!(first.accepted);
    let old = first.transcript.find(tag::RESPONSE).unwrap().to_vec();
    let out = bed.run_round_with(&mut ReplaceFrame::new(tag::RESPONSE, old));
    assert!(!out.accepted);
    assert!(matches!(out.reason, Some(RejectReason::DecodeFailure | RejectReason::ResponseMismatch)));
}

#[test]
fn server_rejects_bad_auth1_fields() {
    let bed = bed(99);
    let id = bed.config().device_id;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let even = BitString::random(128, &mut rng).unwrap();
    let balanced = BitString::from_u128(u128::MAX >> 64, 128).unwrap();

    let zeros = Message::Auth1 { id, even_shuffled: even.clone(), n_d: BitString::zeros(128).unwrap() };
    let mut session = bed.server().session();
    session.start();
    assert_eq!(session.handle(&zeros, &mut rng), vec![Message::Result { accept: false }]);
    assert_eq!(session.reject_reason(), Some(RejectReason::UnbalancedNonce));

    let unknown_row = Message::Auth1 { id, even_shuffled: even.clone(), n_d: balanced.clone() };
    let mut session = bed.server().session();
    session.start();
    session.handle(&unknown_row, &mut rng);
    assert_eq!(session.reject_reason(), Some(RejectReason::UnknownIndex));

    let stranger = Message::Auth1 { id: id ^ 1, even_shuffled: even, n_d: balanced };
    let mut session = bed.server().session();
    session.start();
    session.handle(&stranger, &mut rng);
    assert_eq!(session.reject_reason(), Some(RejectReason::UnknownDevice));
}

#[test]
fn lockout_after_omega_consecutive_failures() {
    let mut bed = bed(99);
    let omega = bed.config().protocol.omega;
    for i in 0..omega {
        assert!(!bed.device().is_locked(), "locked early at {i}");
        bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, 0));
    }
    assert!(bed.device().is_locked());
    let refused = bed.run_round();
    assert_eq!(refused.device_error, Some(ErrorCode::LOCKED));
    assert!(!refused.accepted);
    assert!(bed.unlock());
    assert!(bed.run_round().accepted);
}

#[test]
fn success_resets_the_failure_streak() {
    let mut bed = bed(99);
    let omega = bed.config().protocol.omega;
    for _ in 0..3 {
        for _ in 0..omega - 1 {
            bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, 3));
        }
        assert!(bed.run_round().accepted);
        assert_eq!(bed.device().state().fail_count, 0);
    }
    assert!(!bed.device().is_locked());
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Honest,
    FlipChallenge(usize),
    FlipNonce(usize),
    DropResponse,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Honest),
        (0usize..128).prop_map(Step::FlipChallenge),
        (0usize..128).prop_map(Step::FlipNonce),
        Just(Step::DropResponse),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counters_stay_in_sync(steps in proptest::collection::vec(step(), 1..20)) {
        let mut bed = bed(9);
        for s in steps {
            match s {
                Step::Honest => { bed.run_round(); }
                Step::FlipChallenge(b) => { bed.run_round_with(&mut FlipBit::new(tag::CHALLENGE, b)); }
                Step::FlipNonce(b) => { bed.run_round_with(&mut FlipBit::new(tag::NONCE, b)); }
                Step::DropResponse => {
                    let mut drop = |_d, f: Vec<u8>| if f[4] == tag::RESPONSE {
                        pufrla_core::harness::Action::Drop
                    } else {
                        pufrla_core::harness::Action::Deliver(f)
                    };
                    bed.run_round_with(&mut drop);
                }
            }
            if bed.device().is_locked() {
                bed.unlock();
            }
            assert_counters_in_sync(&bed);
        }
        prop_assert!(bed.run_round().accepted);
    }

    #[test]
    fn gate_holds_for_arbitrary_traffic(
        msgs in proptest::collection::vec((0u8..5, any::<u128>()), 1..60),
    ) {
        let mut bed = bed(9);
        for (kind, v) in msgs {
            let bits = BitString::from_u128(v, 128).unwrap();
            let msg = match kind {
                0 => Message::Init,
                1 => Message::Nonce { n_s: bits },
                2 => Message::Challenge { x: bits },
                3 => Message::Unlock { token: v },
                _ => Message::Result { accept: v & 1 == 1 },
            };
            bed.deliver_to_device(&msg);
        }
        prop_assert_eq!(bed.device().puf_invocations(), 0);
    }
}
