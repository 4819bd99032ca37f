//! Link-layer CRC-24, polynomial x^24 + x^10 + x^9 + x^6 + x^4 + x^3 + x + 1.

use super::LinkError;

/// Initial value used on the advertising channels.
pub const ADV_CRC_INIT: u32 = 0x555555;

// The right-shifting form keeps register position 23 (the first bit on air)
// in bit 0, so the polynomial is used bit-reversed.
const POLY_REFLECTED: u32 = 0xDA6000;

const TABLE: [u32; 256] = build_table();

const fn build_table() -> [u32; 256] {
    let mut t = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { (c >> 1) ^ POLY_REFLECTED } else { c >> 1 };
            k += 1;
        }
        t[i] = c;
        i += 1;
    }
    t
}

fn reflect24(v: u32) -> u32 {
    v.reverse_bits() >> 8
}

/// CRC over an arbitrary byte string, returned in air byte order (the three
/// bytes that follow the PDU, each sent LSB first).
pub fn crc24_raw(data: &[u8], init: u32) -> [u8; 3] {
    let mut crc = reflect24(init & 0xFF_FFFF);
    for &b in data {
        crc = (crc >> 8) ^ TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    [crc as u8, (crc >> 8) as u8, (crc >> 16) as u8]
}

/// CRC of an advertising PDU (2..=39 bytes).
pub fn crc24(pdu: &[u8], init: u32) -> Result<[u8; 3], LinkError> {
    if !(2..=39).contains(&pdu.len()) {
        return Err(LinkError::LengthOutOfRange(pdu.len()));
    }
    Ok(crc24_raw(pdu, init))
}
