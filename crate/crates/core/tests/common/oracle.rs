//! Bit-serial reference models written directly from the register diagrams.
//!
//! These never share code with the table-driven implementations in the
//! library. Known-answer constants in the test suite were produced here.

/// Whitening keystream bits for a channel, one bit per element, in air order.
///
/// Register cells are modelled as an array `cells[0..7]`. Cell 0 is loaded
/// with 1, cells 1..=6 with the channel index MSB first. Each clock emits
/// cell 6, feeds it back into cell 0 and XORs it into cell 4.
pub fn whitening_keystream(channel: u8, nbits: usize) -> Vec<u8> {
    let mut cells = [0u8; 7];
    cells[0] = 1;
    for i in 0..6 {
        cells[1 + i] = (channel >> (5 - i)) & 1;
    }
    let mut out = Vec::with_capacity(nbits);
    for _ in 0..nbits {
        let x7 = cells[6];
        out.push(x7);
        let mut next = [0u8; 7];
        next[0] = x7;
        next[1] = cells[0];
        next[2] = cells[1];
        next[3] = cells[2];
        next[4] = cells[3] ^ x7;
        next[5] = cells[4];
        next[6] = cells[5];
        cells = next;
    }
    out
}

pub fn bytes_to_bits_lsb(data: &[u8]) -> Vec<u8> {
    data.iter().flat_map(|b| (0..8).map(move |i| (b >> i) & 1)).collect()
}

pub fn bits_to_bytes_lsb(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, b)| acc | (b << i)))
        .collect()
}

pub fn whiten(data: &[u8], channel: u8) -> Vec<u8> {
    let ks = whitening_keystream(channel, data.len() * 8);
    let bits: Vec<u8> = bytes_to_bits_lsb(data).iter().zip(ks).map(|(a, b)| a ^ b).collect();
    bits_to_bytes_lsb(&bits)
}

/// CRC-24 shift register: cells 0..24, cell 0 loaded with the init LSB.
/// Data enters LSB first; the feedback is cell 23 XOR the input bit and is
/// tapped into cells 0, 1, 3, 4, 6, 9, 10. Output bits leave cell 23 first.
pub fn crc24(data: &[u8], init: u32) -> [u8; 3] {
    let mut cells = [0u8; 24];
    for (i, c) in cells.iter_mut().enumerate() {
        *c = ((init >> i) & 1) as u8;
    }
    for bit in bytes_to_bits_lsb(data) {
        let fb = cells[23] ^ bit;
        for i in (1..24).rev() {
            cells[i] = cells[i - 1];
        }
        cells[0] = fb;
        for tap in [1, 3, 4, 6, 9, 10] {
            cells[tap] ^= fb;
        }
    }
    let air: Vec<u8> = (0..24).map(|i| cells[23 - i]).collect();
    let b = bits_to_bytes_lsb(&air);
    [b[0], b[1], b[2]]
}

/// 802.15.4 FCS register: 16 cells loaded from `init` (cell i = bit i).
/// Message bits enter LSB first; feedback is input XOR cell 15, tapped into
/// cells 0, 5 and 12. The x^15 coefficient is transmitted first.
pub fn fcs16(data: &[u8], init: u16) -> [u8; 2] {
    let mut r = [0u8; 16];
    for (i, c) in r.iter_mut().enumerate() {
        *c = ((init >> i) & 1) as u8;
    }
    for bit in bytes_to_bits_lsb(data) {
        let fb = bit ^ r[15];
        for i in (1..16).rev() {
            r[i] = r[i - 1];
        }
        r[0] = fb;
        r[5] ^= fb;
        r[12] ^= fb;
    }
    let air: Vec<u8> = (0..16).map(|i| r[15 - i]).collect();
    let b = bits_to_bytes_lsb(&air);
    [b[0], b[1]]
}
