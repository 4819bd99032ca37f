#![allow(dead_code)]

pub mod oracle;

use sdrsniff_core::ble::{AdvPdu, PduType};

pub const CAPTURED_ADV_A: [u8; 6] = [0x41, 0xe0, 0x30, 0x2e, 0x66, 0x69];
pub const CAPTURED_ADV_DATA: &str = "0303aafe0e16aafe10bb0074616a64696e690a";

/// The non-connectable advertisement from the reference capture.
pub fn captured_pdu() -> AdvPdu {
    let mut p = AdvPdu::new(
        PduType::AdvNonconnInd,
        CAPTURED_ADV_A,
        hex::decode(CAPTURED_ADV_DATA).unwrap(),
    );
    p.tx_add = true;
    p
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}
