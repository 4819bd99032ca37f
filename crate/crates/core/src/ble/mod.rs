//! BLE advertising-channel link layer.
//!
//! Air format, every field LSB first:
//!
//! ```text
//! preamble(1) | access address(4) | PDU header(2) | payload(6..=37) | CRC(3)
//!                                   \________ whitened ________________________/
//! ```

mod crc;
mod whitening;

use std::fmt;

use thiserror::Error;

use crate::modem::{bits_to_bytes_lsb, BitStream};

pub use crc::{crc24, crc24_raw, ADV_CRC_INIT};
pub use whitening::{whiten, Whitener};

/// Access address of every advertising-channel packet.
pub const ADV_ACCESS_ADDRESS: u32 = 0x8E89_BED6;
/// Largest advertising payload (AdvA + AdvData).
pub const MAX_PAYLOAD_LEN: usize = 37;
pub const MAX_ADV_DATA_LEN: usize = 31;
/// Longest legal packet on air in bytes.
pub const MAX_PACKET_LEN: usize = 1 + 4 + 2 + MAX_PAYLOAD_LEN + 3;

/// 2.4 GHz ISM band edges shared by classic and low energy Bluetooth.
pub const BAND_LOW_HZ: f64 = 2.4000e9;
pub const BAND_HIGH_HZ: f64 = 2.4835e9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("channel {0} is not valid here")]
    BadChannel(u8),
    #[error("PDU length {0} outside 2..=39 bytes")]
    LengthOutOfRange(usize),
    #[error("need at least header and CRC ({0} bytes given)")]
    TooShort(usize),
    #[error("header declares {declared} payload bytes but only {available} follow")]
    LengthMismatch { declared: usize, available: usize },
    #[error("payload length {0} is not a legal advertising payload (6..=37)")]
    BadPayloadLength(usize),
    #[error("advertising data of {0} bytes exceeds 31")]
    PayloadTooLong(usize),
}

/// Advertising PDU type (low nibble of header byte 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PduType {
    AdvInd,
    AdvDirectInd,
    AdvNonconnInd,
    ScanReq,
    ScanRsp,
    ConnectReq,
    AdvScanInd,
    Unknown(u8),
}

impl PduType {
    pub fn from_code(code: u8) -> PduType {
        match code & 0x0F {
            0 => PduType::AdvInd,
            1 => PduType::AdvDirectInd,
            2 => PduType::AdvNonconnInd,
            3 => PduType::ScanReq,
            4 => PduType::ScanRsp,
            5 => PduType::ConnectReq,
            6 => PduType::AdvScanInd,
            n => PduType::Unknown(n),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            PduType::AdvInd => 0,
            PduType::AdvDirectInd => 1,
            PduType::AdvNonconnInd => 2,
            PduType::ScanReq => 3,
            PduType::ScanRsp => 4,
            PduType::ConnectReq => 5,
            PduType::AdvScanInd => 6,
            PduType::Unknown(n) => n & 0x0F,
        }
    }

    pub fn name(self) -> String {
        match self {
            PduType::AdvInd => "ADV_IND".into(),
            PduType::AdvDirectInd => "ADV_DIRECT_IND".into(),
            PduType::AdvNonconnInd => "ADV_NONCONN_IND".into(),
            PduType::ScanReq => "SCAN_REQ".into(),
            PduType::ScanRsp => "SCAN_RSP".into(),
            PduType::ConnectReq => "CONNECT_REQ".into(),
            PduType::AdvScanInd => "ADV_SCAN_IND".into(),
            PduType::Unknown(n) => format!("t{n}"),
        }
    }
}

/// Advertising channel PDU. `adv_a` is kept in air byte order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdvPdu {
    pub pdu_type: PduType,
    pub tx_add: bool,
    pub rx_add: bool,
    pub adv_a: [u8; 6],
    pub adv_data: Vec<u8>,
}

impl AdvPdu {
    pub fn new(pdu_type: PduType, adv_a: [u8; 6], adv_data: Vec<u8>) -> Self {
        AdvPdu {
            pdu_type,
            tx_add: false,
            rx_add: false,
            adv_a,
            adv_data,
        }
    }

    pub fn payload_len(&self) -> usize {
        6 + self.adv_data.len()
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if self.adv_data.len() > MAX_ADV_DATA_LEN {
            return Err(LinkError::PayloadTooLong(self.adv_data.len()));
        }
        Ok(())
    }

    pub fn header(&self) -> [u8; 2] {
        let b0 = self.pdu_type.code() | (u8::from(self.tx_add) << 6) | (u8::from(self.rx_add) << 7);
        [b0, self.payload_len() as u8]
    }

    /// Header followed by payload, unwhitened, without CRC.
    pub fn to_bytes(&self) -> Result<Vec<u8>, LinkError> {
        self.validate()?;
        let mut out = Vec::with_capacity(2 + self.payload_len());
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.adv_a);
        out.extend_from_slice(&self.adv_data);
        Ok(out)
    }
}

/// Result of parsing dewhitened PDU + CRC bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPdu {
    pub pdu: AdvPdu,
    pub crc: [u8; 3],
    pub crc_ok: bool,
}

/// Parse dewhitened `PDU || CRC` bytes. Trailing bytes past the CRC are
/// ignored.
pub fn parse_adv_pdu(dewhitened: &[u8]) -> Result<ParsedPdu, LinkError> {
    if dewhitened.len() < 5 {
        return Err(LinkError::TooShort(dewhitened.len()));
    }
    let declared = (dewhitened[1] & 0x3F) as usize;
    let available = dewhitened.len() - 5;
    if declared > available {
        return Err(LinkError::LengthMismatch { declared, available });
    }
    if !(6..=MAX_PAYLOAD_LEN).contains(&declared) {
        return Err(LinkError::BadPayloadLength(declared));
    }
    let b0 = dewhitened[0];
    let pdu_end = 2 + declared;
    let mut adv_a = [0u8; 6];
    adv_a.copy_from_slice(&dewhitened[2..8]);
    let pdu = AdvPdu {
        pdu_type: PduType::from_code(b0),
        tx_add: b0 & 0x40 != 0,
        rx_add: b0 & 0x80 != 0,
        adv_a,
        adv_data: dewhitened[8..pdu_end].to_vec(),
    };
    let crc = [dewhitened[pdu_end], dewhitened[pdu_end + 1], dewhitened[pdu_end + 2]];
    let crc_ok = crc24_raw(&dewhitened[..pdu_end], ADV_CRC_INIT) == crc;
    Ok(ParsedPdu { pdu, crc, crc_ok })
}

/// One of the three primary advertising channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvChannel {
    pub index: u8,
    pub center_freq: f64,
}

impl AdvChannel {
    pub fn new(index: u8) -> Result<Self, LinkError> {
        Ok(AdvChannel {
            index,
            center_freq: channel_to_freq(index)?,
        })
    }
}

/// Center frequency of an advertising channel.
pub fn channel_to_freq(index: u8) -> Result<f64, LinkError> {
    match index {
        37 => Ok(2.402e9),
        38 => Ok(2.426e9),
        39 => Ok(2.480e9),
        other => Err(LinkError::BadChannel(other)),
    }
}

/// Preamble byte whose last bit on air differs from the access address LSB.
pub fn preamble_for(access_address: u32) -> u8 {
    if access_address & 1 == 1 {
        0x55
    } else {
        0xAA
    }
}

/// A complete advertising packet ready for the air.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvPacket {
    pub preamble: u8,
    pub access_address: u32,
    pub pdu: AdvPdu,
    pub crc: [u8; 3],
    pub channel: AdvChannel,
}

impl AdvPacket {
    pub fn new(pdu: AdvPdu, channel: AdvChannel) -> Result<Self, LinkError> {
        let crc = crc24_raw(&pdu.to_bytes()?, ADV_CRC_INIT);
        Ok(AdvPacket {
            preamble: preamble_for(ADV_ACCESS_ADDRESS),
            access_address: ADV_ACCESS_ADDRESS,
            pdu,
            crc,
            channel,
        })
    }

    /// Bytes as transmitted, PDU and CRC whitened.
    pub fn air_bytes(&self) -> Vec<u8> {
        let mut body = self.pdu.to_bytes().expect("validated in new");
        body.extend_from_slice(&self.crc);
        Whitener::new(self.channel.index)
            .expect("advertising channel")
            .apply(&mut body);
        let mut out = Vec::with_capacity(5 + body.len());
        out.push(self.preamble);
        out.extend_from_slice(&self.access_address.to_le_bytes());
        out.extend(body);
        out
    }
}

/// Serialize a PDU for a channel into air bits.
pub fn build_adv_packet(pdu: &AdvPdu, channel: AdvChannel) -> Result<BitStream, LinkError> {
    let packet = AdvPacket::new(pdu.clone(), channel)?;
    Ok(BitStream::from_bytes_lsb(&packet.air_bytes()))
}

/// Access address bits in air order, for correlation.
pub fn access_address_bits(aa: u32) -> Vec<u8> {
    (0..32).map(|i| ((aa >> i) & 1) as u8).collect()
}

/// Dewhiten and parse the bits that follow an access address.
///
/// Returns the parsed PDU and the number of bits it occupied.
pub fn decode_after_access_address(bits: &[u8], channel_index: u8) -> Result<(ParsedPdu, usize), LinkError> {
    if bits.len() < 16 {
        return Err(LinkError::TooShort(bits.len() / 8));
    }
    let mut w = Whitener::new(channel_index)?;
    let mut header = bits[..16].to_vec();
    w.apply_bits(&mut header);
    let header = bits_to_bytes_lsb(&header);
    let declared = (header[1] & 0x3F) as usize;
    if !(6..=MAX_PAYLOAD_LEN).contains(&declared) {
        return Err(LinkError::BadPayloadLength(declared));
    }
    let total_bits = (2 + declared + 3) * 8;
    if bits.len() < total_bits {
        return Err(LinkError::LengthMismatch {
            declared,
            available: (bits.len() / 8).saturating_sub(5),
        });
    }
    let mut body = bits[..total_bits].to_vec();
    Whitener::new(channel_index)?.apply_bits(&mut body);
    Ok((parse_adv_pdu(&bits_to_bytes_lsb(&body))?, total_bits))
}

/// One line of sniffer output, field-compatible with `BLE_rx`:
///
/// `163342us Pkt192 Ch37 AA:8e89bed6 ADV_PDU_t2:ADV_NONCONN_IND T1 R0 PloadL25 AdvA:41e0302e6669 Data:0303... CRC0`
///
/// `CRC0` means the CRC matched.
#[derive(Debug, Clone, PartialEq)]
pub struct SnifferLine {
    pub timestamp_us: u64,
    pub packet_number: u64,
    pub channel: u8,
    pub access_address: u32,
    pub pdu: AdvPdu,
    pub crc_ok: bool,
}

impl fmt::Display for SnifferLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.pdu;
        write!(
            f,
            "{}us Pkt{} Ch{} AA:{:08x} ADV_PDU_t{}:{} T{} R{} PloadL{} AdvA:{} Data:{} CRC{}",
            self.timestamp_us,
            self.packet_number,
            self.channel,
            self.access_address,
            p.pdu_type.code(),
            p.pdu_type.name(),
            u8::from(p.tx_add),
            u8::from(p.rx_add),
            p.payload_len(),
            hex::encode(p.adv_a),
            hex::encode(&p.adv_data),
            u8::from(!self.crc_ok),
        )
    }
}
