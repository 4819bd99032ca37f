mod common;

use common::oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdrsniff_core::advdata::{self, AdStructure};
use sdrsniff_core::ble::{self, AdvChannel, AdvPdu, PduType, ADV_CRC_INIT};
use sdrsniff_core::modem::{self, BitStream};
use sdrsniff_core::mpdu::{self, Mpdu};

// Published check values for the input "123456789".
const CRC24_BLE_CHECK: [u8; 3] = [0x56, 0x5a, 0xc2];
const FCS_KERMIT_CHECK: [u8; 2] = [0x89, 0x21];
const FCS_PRESET_FFFF_CHECK: [u8; 2] = [0x91, 0x6f];

// Frozen from the bit-serial oracle: first 8 keystream bytes, LSB-first.
const KEYSTREAM: [(u8, &str); 5] = [
    (0, "40b2bcc31f374a5f"),
    (1, "8940b2bcc31f374a"),
    (37, "8dd257a13da766b0"),
    (38, "d6c5442059dee18f"),
    (39, "1f374a5f85f69c9a"),
];

fn keystream_via_library(ch: u8, nbytes: usize) -> Vec<u8> {
    ble::whiten(&vec![0u8; nbytes], ch).unwrap()
}

#[test]
fn whitening_known_answers() {
    for (ch, want) in KEYSTREAM {
        let oracle_bytes = oracle::bits_to_bytes_lsb(&oracle::whitening_keystream(ch, 64));
        assert_eq!(hex::encode(&oracle_bytes), want);
        assert_eq!(hex::encode(keystream_via_library(ch, 8)), want, "channel {ch}");
    }
}

#[test]
fn whitening_matches_oracle_on_every_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<u8> = (0..200).map(|_| rng.random()).collect();
    for ch in 0..40 {
        assert_eq!(
            ble::whiten(&data, ch).unwrap(),
            oracle::whiten(&data, ch),
            "channel {ch}"
        );
    }
    assert!(ble::whiten(&data, 40).is_err());
}

#[test]
fn whitening_period_is_127() {
    for ch in 0..40 {
        let ks = oracle::bytes_to_bits_lsb(&keystream_via_library(ch, 64));
        assert!((0..ks.len() - 127).all(|i| ks[i] == ks[i + 127]));
        for p in 1..127 {
            assert!((0..ks.len() - p).any(|i| ks[i] != ks[i + p]), "channel {ch} period {p}");
        }
    }
}

#[test]
fn crc_known_answers() {
    assert_eq!(oracle::crc24(b"123456789", ADV_CRC_INIT), CRC24_BLE_CHECK);
    assert_eq!(ble::crc24_raw(b"123456789", ADV_CRC_INIT), CRC24_BLE_CHECK);
    assert_eq!(oracle::fcs16(b"123456789", 0), FCS_KERMIT_CHECK);
    assert_eq!(mpdu::fcs16(b"123456789"), FCS_KERMIT_CHECK);
    assert_eq!(oracle::fcs16(b"123456789", 0xFFFF), FCS_PRESET_FFFF_CHECK);
    assert_eq!(mpdu::fcs16_with_init(b"123456789", 0xFFFF), FCS_PRESET_FFFF_CHECK);
}

#[test]
fn crc24_matches_oracle_for_other_inits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let init = rng.random::<u32>() & 0xFF_FFFF;
        let data: Vec<u8> = (0..rng.random_range(0..60)).map(|_| rng.random()).collect();
        assert_eq!(ble::crc24_raw(&data, init), oracle::crc24(&data, init));
    }
}

#[test]
fn fcs_residue_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let mut data: Vec<u8> = (0..rng.random_range(1..120)).map(|_| rng.random()).collect();
        let fcs = mpdu::fcs16(&data);
        data.extend_from_slice(&fcs);
        assert_eq!(mpdu::fcs16(&data), [0, 0]);
    }
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 1 << (bit % 8);
}

#[test]
fn crc24_detects_bursts_up_to_24_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<u8> = (0..30).map(|_| rng.random()).collect();
    let good = ble::crc24_raw(&data, ADV_CRC_INIT);
    let nbits = data.len() * 8;
    for len in 1..=24 {
        for start in 0..=nbits - len {
            let mut d = data.clone();
            flip(&mut d, start);
            if len > 1 {
                flip(&mut d, start + len - 1);
                for k in 1..len - 1 {
                    if rng.random::<bool>() {
                        flip(&mut d, start + k);
                    }
                }
            }
            assert_ne!(ble::crc24_raw(&d, ADV_CRC_INIT), good, "burst {len} at {start}");
        }
    }
}

#[test]
fn fcs_detects_all_double_bit_errors_in_a_wixel_frame() {
    let frame = mpdu::build_mpdu(&mpdu::MpduStream::wixel().frame_at(9)).unwrap();
    let nbits = frame.len() * 8;
    for a in 0..nbits {
        for b in a + 1..nbits {
            let mut f = frame.clone();
            flip(&mut f, a);
            flip(&mut f, b);
            assert!(!mpdu::parse_mpdu(&f).unwrap().fcs_ok, "bits {a},{b}");
        }
    }
}

#[test]
fn single_bit_flips_fail_the_crc_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ch = AdvChannel::new(38).unwrap();
    for _ in 0..50 {
        let n = rng.random_range(0..=31);
        let pdu = AdvPdu::new(PduType::AdvInd, rng.random(), (0..n).map(|_| rng.random()).collect());
        let bits = ble::build_adv_packet(&pdu, ch).unwrap().into_bits();
        // Flips inside the header, payload or CRC, after preamble and AA.
        for i in 40..bits.len() {
            let mut b = bits.clone();
            b[i] ^= 1;
            let ok = ble::decode_after_access_address(&b[40..], 38).map(|(p, _)| p.crc_ok);
            assert_ne!(ok, Ok(true), "bit {i}");
        }
    }
}

fn arb_pdu() -> impl Strategy<Value = AdvPdu> {
    (
        prop_oneof![Just(0u8), Just(2), Just(6), Just(9), Just(15)],
        any::<bool>(),
        any::<bool>(),
        any::<[u8; 6]>(),
        prop::collection::vec(any::<u8>(), 0..=31),
    )
        .prop_map(|(t, tx, rx, a, d)| {
            let mut p = AdvPdu::new(PduType::from_code(t), a, d);
            p.tx_add = tx;
            p.rx_add = rx;
            p
        })
}

fn arb_mpdu() -> impl Strategy<Value = Mpdu> {
    (
        any::<u16>(),
        any::<u8>(),
        any::<u16>(),
        any::<u16>(),
        any::<u16>(),
        prop::collection::vec(any::<u8>(), 0..=104),
    )
        .prop_map(|(fc, seq, pan, d, s, payload)| Mpdu {
            frame_control: fc,
            seq,
            dest_pan: pan,
            dest_addr: d,
            src_addr: s,
            payload,
            fcs_ok: true,
        })
}

proptest! {
    #[test]
    fn whitening_is_an_involution(data in prop::collection::vec(any::<u8>(), 0..64), ch in 0u8..40) {
        let once = ble::whiten(&data, ch).unwrap();
        prop_assert_eq!(ble::whiten(&once, ch).unwrap(), data);
    }

    #[test]
    fn crc24_matches_oracle(data in prop::collection::vec(any::<u8>(), 0..80)) {
        prop_assert_eq!(ble::crc24_raw(&data, ADV_CRC_INIT), oracle::crc24(&data, ADV_CRC_INIT));
    }

    #[test]
    fn fcs_matches_oracle(data in prop::collection::vec(any::<u8>(), 0..120), init in any::<u16>()) {
        prop_assert_eq!(mpdu::fcs16_with_init(&data, init), oracle::fcs16(&data, init));
    }

    #[test]
    fn adv_pdu_round_trip(pdu in arb_pdu(), ch in 37u8..=39) {
        let bits = ble::build_adv_packet(&pdu, AdvChannel::new(ch).unwrap()).unwrap();
        let aa = ble::access_address_bits(ble::ADV_ACCESS_ADDRESS);
        prop_assert_eq!(&bits.bits()[8..40], aa.as_slice());
        let (parsed, used) = ble::decode_after_access_address(&bits.bits()[40..], ch).unwrap();
        prop_assert!(parsed.crc_ok);
        prop_assert_eq!(used, bits.len() - 40);
        prop_assert_eq!(parsed.pdu, pdu);
    }

    #[test]
    fn mpdu_round_trip(m in arb_mpdu()) {
        let bytes = mpdu::build_mpdu(&m).unwrap();
        prop_assert_eq!(mpdu::parse_mpdu(&bytes).unwrap(), m.clone());
        let air = mpdu::frame_for_air(&bytes);
        let (raw, _) = mpdu::decode_after_sync(&air.bits()[64..]).unwrap();
        prop_assert_eq!(raw, bytes);
    }

    #[test]
    fn ad_structures_round_trip(items in prop::collection::vec((1u8..=255, prop::collection::vec(any::<u8>(), 0..6)), 0..5)) {
        let s: Vec<AdStructure> = items.into_iter().map(|(t, v)| AdStructure::new(t, v)).collect();
        let bytes = advdata::serialize_ad_structures(&s).unwrap();
        prop_assert_eq!(advdata::parse_ad_structures(&bytes).unwrap(), s);
    }

    #[test]
    fn hex_lines_round_trip(frames in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..20), 0..6)) {
        let text = mpdu::to_hex_lines(frames.iter().map(Vec::as_slice));
        prop_assert_eq!(mpdu::parse_hex_lines(&text).unwrap(), frames);
    }

    #[test]
    fn correlation_matches_naive_search(
        bits in prop::collection::vec(0u8..2, 0..400),
        pattern in prop::collection::vec(0u8..2, 8..80),
        max_errors in 0usize..3,
    ) {
        let stream = BitStream::new(bits.clone()).unwrap();
        let got = modem::correlate_pattern(&stream, &pattern, max_errors);
        if max_errors * 4 >= pattern.len() {
            prop_assert!(got.is_err());
        } else {
            let naive: Vec<usize> = if bits.len() < pattern.len() {
                vec![]
            } else {
                (0..=bits.len() - pattern.len())
                    .filter(|&i| bits[i..i + pattern.len()].iter().zip(&pattern).filter(|(a, b)| a != b).count() <= max_errors)
                    .collect()
            };
            prop_assert_eq!(got.unwrap(), naive);
        }
    }
}
