//! Minimal 802.15.4-style MAC frame: header, payload, FCS.
//!
//! Header layout (little endian): frame control (2), sequence number (1),
//! destination PAN (2), destination short address (2), source short
//! address (2). The FCS is CRC-16 x^16 + x^12 + x^5 + 1 sent low byte first.
//!
//! For the 2-FSK air link the frame is wrapped as
//! `preamble(4 x 0xAA) | sync(D3 91 D3 91) | length(1) | MPDU`, LSB first.

use thiserror::Error;

use crate::modem::{bits_to_bytes_lsb, BitStream};

pub const HEADER_LEN: usize = 9;
pub const FCS_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 104;
pub const MIN_FRAME_LEN: usize = HEADER_LEN + FCS_LEN;

/// Frame type "data", short destination and short source addressing.
pub const FRAME_CONTROL_DATA_SHORT: u16 = 0x0001 | (0b10 << 10) | (0b10 << 14);

/// 802.15.4 FCS initial value.
pub const FCS_INIT: u16 = 0x0000;
/// Initial value used by the CC2511 hardware CRC.
pub const CC2511_FCS_INIT: u16 = 0xFFFF;

pub const AIR_PREAMBLE: [u8; 4] = [0xAA; 4];
pub const AIR_SYNC: [u8; 4] = [0xD3, 0x91, 0xD3, 0x91];

/// Static payload the Wixel test transmitter sends once per second.
pub const WIXEL_PAYLOAD: [u8; 4] = [0xFF, 0xEE, 0xFF, 0xEE];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MpduError {
    #[error("payload of {0} bytes exceeds 104")]
    PayloadTooLong(usize),
    #[error("{0} bytes is shorter than an 11-byte frame")]
    TooShort(usize),
    #[error("hex line {line}: {msg}")]
    BadHexLine { line: usize, msg: String },
    #[error("frame length byte {declared} needs {needed} bits, {available} available")]
    Truncated {
        declared: usize,
        needed: usize,
        available: usize,
    },
}

const FCS_POLY_REFLECTED: u16 = 0x8408;

const FCS_TABLE: [u16; 256] = {
    let mut t = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u16;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 {
                (c >> 1) ^ FCS_POLY_REFLECTED
            } else {
                c >> 1
            };
            k += 1;
        }
        t[i] = c;
        i += 1;
    }
    t
};

/// 802.15.4 frame check sequence (init 0), low byte first.
pub fn fcs16(bytes: &[u8]) -> [u8; 2] {
    fcs16_with_init(bytes, FCS_INIT)
}

/// FCS with an explicit register preset, e.g. [`CC2511_FCS_INIT`].
pub fn fcs16_with_init(bytes: &[u8], init: u16) -> [u8; 2] {
    // In the right-shifting form the register is bit-reversed; 0x0000 and
    // 0xFFFF are their own reversal, other presets are reflected here.
    let mut crc = init.reverse_bits();
    for &b in bytes {
        crc = (crc >> 8) ^ FCS_TABLE[((crc ^ b as u16) & 0xFF) as usize];
    }
    crc.to_le_bytes()
}

/// MAC protocol data unit. `fcs_ok` is only meaningful after parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mpdu {
    pub frame_control: u16,
    pub seq: u8,
    pub dest_pan: u16,
    pub dest_addr: u16,
    pub src_addr: u16,
    pub payload: Vec<u8>,
    pub fcs_ok: bool,
}

impl Mpdu {
    /// Data frame with short addressing.
    pub fn data(seq: u8, dest_pan: u16, dest_addr: u16, src_addr: u16, payload: Vec<u8>) -> Self {
        Mpdu {
            frame_control: FRAME_CONTROL_DATA_SHORT,
            seq,
            dest_pan,
            dest_addr,
            src_addr,
            payload,
            fcs_ok: true,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + FCS_LEN
    }
}

/// Serialize header, payload and FCS.
pub fn build_mpdu(m: &Mpdu) -> Result<Vec<u8>, MpduError> {
    build_mpdu_with_init(m, FCS_INIT)
}

pub fn build_mpdu_with_init(m: &Mpdu, fcs_init: u16) -> Result<Vec<u8>, MpduError> {
    if m.payload.len() > MAX_PAYLOAD {
        return Err(MpduError::PayloadTooLong(m.payload.len()));
    }
    let mut out = Vec::with_capacity(m.encoded_len());
    out.extend_from_slice(&m.frame_control.to_le_bytes());
    out.push(m.seq);
    out.extend_from_slice(&m.dest_pan.to_le_bytes());
    out.extend_from_slice(&m.dest_addr.to_le_bytes());
    out.extend_from_slice(&m.src_addr.to_le_bytes());
    out.extend_from_slice(&m.payload);
    let fcs = fcs16_with_init(&out, fcs_init);
    out.extend_from_slice(&fcs);
    Ok(out)
}

pub fn parse_mpdu(bytes: &[u8]) -> Result<Mpdu, MpduError> {
    parse_mpdu_with_init(bytes, FCS_INIT)
}

pub fn parse_mpdu_with_init(bytes: &[u8], fcs_init: u16) -> Result<Mpdu, MpduError> {
    if bytes.len() < MIN_FRAME_LEN {
        return Err(MpduError::TooShort(bytes.len()));
    }
    let le = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let body_end = bytes.len() - FCS_LEN;
    Ok(Mpdu {
        frame_control: le(0),
        seq: bytes[2],
        dest_pan: le(3),
        dest_addr: le(5),
        src_addr: le(7),
        payload: bytes[HEADER_LEN..body_end].to_vec(),
        fcs_ok: fcs16_with_init(&bytes[..body_end], fcs_init) == bytes[body_end..],
    })
}

/// Endless stream of identical data frames with an incrementing sequence
/// number (wrapping at 256).
#[derive(Debug, Clone)]
pub struct MpduStream {
    template: Mpdu,
    next_seq: u8,
}

impl MpduStream {
    pub fn new(template: Mpdu) -> Self {
        let next_seq = template.seq;
        MpduStream { template, next_seq }
    }

    /// The Wixel test link: payload FF EE FF EE, PAN 0x1234, 0x0002 -> 0x0001.
    pub fn wixel() -> Self {
        Self::new(Mpdu::data(0, 0x1234, 0x0001, 0x0002, WIXEL_PAYLOAD.to_vec()))
    }

    /// Frame number `index` of the stream without advancing it.
    pub fn frame_at(&self, index: u64) -> Mpdu {
        Mpdu {
            seq: self.template.seq.wrapping_add(index as u8),
            ..self.template.clone()
        }
    }
}

impl Iterator for MpduStream {
    type Item = Mpdu;

    fn next(&mut self) -> Option<Mpdu> {
        let m = Mpdu {
            seq: self.next_seq,
            ..self.template.clone()
        };
        self.next_seq = self.next_seq.wrapping_add(1);
        Some(m)
    }
}

/// One frame per line, lowercase hex, no separators.
pub fn to_hex_lines<'a>(frames: impl IntoIterator<Item = &'a [u8]>) -> String {
    frames
        .into_iter()
        .map(|f| {
            let mut s = hex::encode(f);
            s.push('\n');
            s
        })
        .collect()
}

/// Inverse of [`to_hex_lines`]; blank lines are skipped.
pub fn parse_hex_lines(text: &str) -> Result<Vec<Vec<u8>>, MpduError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let l = l.trim();
            if l.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(MpduError::BadHexLine {
                    line: i + 1,
                    msg: "uppercase hex".into(),
                });
            }
            hex::decode(l).map_err(|e| MpduError::BadHexLine {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Wrap an encoded MPDU for the 2-FSK link.
pub fn frame_for_air(mpdu: &[u8]) -> BitStream {
    let mut bytes = Vec::with_capacity(9 + mpdu.len());
    bytes.extend_from_slice(&AIR_PREAMBLE);
    bytes.extend_from_slice(&AIR_SYNC);
    bytes.push(mpdu.len() as u8);
    bytes.extend_from_slice(mpdu);
    BitStream::from_bytes_lsb(&bytes)
}

pub fn sync_bits() -> Vec<u8> {
    BitStream::from_bytes_lsb(&AIR_SYNC).into_bits()
}

/// Read the length byte and MPDU that follow a sync word.
///
/// Returns the raw MPDU bytes and the number of bits consumed.
pub fn decode_after_sync(bits: &[u8]) -> Result<(Vec<u8>, usize), MpduError> {
    if bits.len() < 8 {
        return Err(MpduError::Truncated {
            declared: 0,
            needed: 8,
            available: bits.len(),
        });
    }
    let declared = bits_to_bytes_lsb(&bits[..8])[0] as usize;
    if declared < MIN_FRAME_LEN {
        return Err(MpduError::TooShort(declared));
    }
    if declared > MIN_FRAME_LEN + MAX_PAYLOAD {
        return Err(MpduError::PayloadTooLong(declared - MIN_FRAME_LEN));
    }
    let needed = 8 * (1 + declared);
    if bits.len() < needed {
        return Err(MpduError::Truncated {
            declared,
            needed,
            available: bits.len(),
        });
    }
    Ok((bits_to_bytes_lsb(&bits[8..needed]), needed))
}
