//! Advertising payload: AD structures, iBeacon and Eddystone-URL.

use std::fmt;

use thiserror::Error;

pub const AD_FLAGS: u8 = 0x01;
pub const AD_COMPLETE_16BIT_UUIDS: u8 = 0x03;
pub const AD_SERVICE_DATA_16BIT: u8 = 0x16;
pub const AD_MANUFACTURER_SPECIFIC: u8 = 0xFF;

/// Apple company id (little endian) followed by the iBeacon type and length.
pub const IBEACON_MARKER: [u8; 4] = [0x4C, 0x00, 0x02, 0x15];
/// Eddystone service UUID 0xFEAA as it appears on air (little endian).
pub const EDDYSTONE_UUID: [u8; 2] = [0xAA, 0xFE];
pub const EDDYSTONE_URL_FRAME: u8 = 0x10;
/// Longest encoded URL body after the scheme byte.
pub const MAX_URL_BODY: usize = 17;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdError {
    #[error("AD structure at offset {offset} declares {declared} bytes, only {remaining} remain")]
    Overrun {
        offset: usize,
        declared: usize,
        remaining: usize,
    },
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("Eddystone frame type 0x{0:02x} is not a URL frame")]
    UnknownFrameType(u8),
    #[error("byte 0x{0:02x} is reserved in Eddystone URL encoding")]
    ReservedUrlByte(u8),
    #[error("URL does not start with a supported scheme: {0}")]
    UnsupportedScheme(String),
    #[error("URL encodes to {0} bytes, limit is 17")]
    UrlTooLong(usize),
    #[error("AD value of {0} bytes does not fit a length byte")]
    ValueTooLong(usize),
}

/// One length-type-value element of advertising data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdStructure {
    pub ad_type: u8,
    pub value: Vec<u8>,
}

impl AdStructure {
    pub fn new(ad_type: u8, value: impl Into<Vec<u8>>) -> Self {
        AdStructure {
            ad_type,
            value: value.into(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        2 + self.value.len()
    }
}

/// Split advertising data into AD structures.
///
/// A zero length byte terminates parsing (the rest is padding).
pub fn parse_ad_structures(adv_data: &[u8]) -> Result<Vec<AdStructure>, AdError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < adv_data.len() {
        let len = adv_data[i] as usize;
        if len == 0 {
            break;
        }
        let remaining = adv_data.len() - i - 1;
        if len > remaining {
            return Err(AdError::Overrun {
                offset: i,
                declared: len,
                remaining,
            });
        }
        out.push(AdStructure {
            ad_type: adv_data[i + 1],
            value: adv_data[i + 2..i + 1 + len].to_vec(),
        });
        i += 1 + len;
    }
    Ok(out)
}

pub fn serialize_ad_structures(structures: &[AdStructure]) -> Result<Vec<u8>, AdError> {
    let mut out = Vec::new();
    for s in structures {
        if s.value.len() > 254 {
            return Err(AdError::ValueTooLong(s.value.len()));
        }
        out.push(1 + s.value.len() as u8);
        out.push(s.ad_type);
        out.extend_from_slice(&s.value);
    }
    Ok(out)
}

/// Apple iBeacon content. Major and minor are big endian on air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IBeacon {
    pub proximity_uuid: [u8; 16],
    pub major: u16,
    pub minor: u16,
    /// Calibrated RSSI at 1 m, dBm.
    pub measured_power: i8,
}

impl IBeacon {
    pub fn to_ad_structure(&self) -> AdStructure {
        let mut v = IBEACON_MARKER.to_vec();
        v.extend_from_slice(&self.proximity_uuid);
        v.extend_from_slice(&self.major.to_be_bytes());
        v.extend_from_slice(&self.minor.to_be_bytes());
        v.push(self.measured_power as u8);
        AdStructure::new(AD_MANUFACTURER_SPECIFIC, v)
    }

    /// Flags structure (`02 01 06`) followed by the iBeacon structure.
    pub fn to_adv_data(&self) -> Vec<u8> {
        serialize_ad_structures(&[AdStructure::new(AD_FLAGS, [0x06]), self.to_ad_structure()]).expect("short values")
    }

    pub fn uuid_string(&self) -> String {
        let h = hex::encode(self.proximity_uuid);
        format!(
            "{}-{}-{}-{}-{}",
            &h[0..8],
            &h[8..12],
            &h[12..16],
            &h[16..20],
            &h[20..32]
        )
    }
}

/// Parse `xxxxxxxx-xxxx-xxxx-xxxx-xxxxxxxxxxxx` or 32 bare hex digits.
pub fn parse_uuid(text: &str) -> Option<[u8; 16]> {
    let compact: String = text.chars().filter(|&c| c != '-').collect();
    let bytes = hex::decode(compact).ok()?;
    bytes.try_into().ok()
}

/// Find and decode an iBeacon manufacturer structure.
pub fn parse_ibeacon(structures: &[AdStructure]) -> Result<Option<IBeacon>, AdError> {
    let Some(s) = structures
        .iter()
        .find(|s| s.ad_type == AD_MANUFACTURER_SPECIFIC && s.value.starts_with(&IBEACON_MARKER))
    else {
        return Ok(None);
    };
    let body = &s.value[IBEACON_MARKER.len()..];
    if body.len() != 21 {
        return Err(AdError::Malformed("iBeacon body (expected 21 bytes)"));
    }
    let mut proximity_uuid = [0u8; 16];
    proximity_uuid.copy_from_slice(&body[..16]);
    Ok(Some(IBeacon {
        proximity_uuid,
        major: u16::from_be_bytes([body[16], body[17]]),
        minor: u16::from_be_bytes([body[18], body[19]]),
        measured_power: body[20] as i8,
    }))
}

const SCHEMES: [&str; 4] = ["http://www.", "https://www.", "http://", "https://"];
const SUFFIXES: [&str; 14] = [
    ".com/", ".org/", ".edu/", ".net/", ".info/", ".biz/", ".gov/", ".com", ".org", ".edu", ".net", ".info", ".biz",
    ".gov",
];

/// Eddystone-URL frame contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EddystoneUrl {
    /// Calibrated TX power at 0 m, dBm.
    pub tx_power: i8,
    pub scheme: u8,
    /// Encoded body: printable ASCII plus expansion codes 0x00..=0x0D.
    pub body: Vec<u8>,
}

impl EddystoneUrl {
    /// Compress a URL using the scheme and suffix tables.
    pub fn encode(url: &str, tx_power: i8) -> Result<Self, AdError> {
        let (scheme, rest) = SCHEMES
            .iter()
            .enumerate()
            // longest prefix wins: "http://www." before "http://"
            .filter(|(_, s)| url.starts_with(*s))
            .max_by_key(|(_, s)| s.len())
            .map(|(i, s)| (i as u8, &url[s.len()..]))
            .ok_or_else(|| AdError::UnsupportedScheme(url.to_string()))?;
        let mut body = Vec::new();
        let mut i = 0;
        let bytes = rest.as_bytes();
        while i < bytes.len() {
            let tail = &rest[i..];
            if let Some((code, s)) = SUFFIXES
                .iter()
                .enumerate()
                .filter(|(_, s)| tail.starts_with(*s))
                .max_by_key(|(_, s)| s.len())
            {
                body.push(code as u8);
                i += s.len();
                continue;
            }
            let c = bytes[i];
            if !(0x21..=0x7E).contains(&c) {
                return Err(AdError::ReservedUrlByte(c));
            }
            body.push(c);
            i += 1;
        }
        if body.len() > MAX_URL_BODY {
            return Err(AdError::UrlTooLong(body.len()));
        }
        Ok(EddystoneUrl { tx_power, scheme, body })
    }

    /// Expanded URL text.
    pub fn url(&self) -> Result<String, AdError> {
        let mut out = SCHEMES
            .get(self.scheme as usize)
            .ok_or(AdError::ReservedUrlByte(self.scheme))?
            .to_string();
        for &b in &self.body {
            match b {
                0x00..=0x0D => out.push_str(SUFFIXES[b as usize]),
                0x21..=0x7E => out.push(b as char),
                other => return Err(AdError::ReservedUrlByte(other)),
            }
        }
        Ok(out)
    }

    /// Service data structure value: UUID, frame type, power, scheme, body.
    pub fn to_ad_structure(&self) -> AdStructure {
        let mut v = EDDYSTONE_UUID.to_vec();
        v.push(EDDYSTONE_URL_FRAME);
        v.push(self.tx_power as u8);
        v.push(self.scheme);
        v.extend_from_slice(&self.body);
        AdStructure::new(AD_SERVICE_DATA_16BIT, v)
    }

    /// Service UUID list followed by the URL service data, the layout a phone
    /// beacon app emits.
    pub fn to_adv_data(&self) -> Vec<u8> {
        serialize_ad_structures(&[
            AdStructure::new(AD_COMPLETE_16BIT_UUIDS, EDDYSTONE_UUID),
            self.to_ad_structure(),
        ])
        .expect("short values")
    }
}

/// Find an Eddystone service-data structure and decode it as a URL frame.
pub fn parse_eddystone_url(structures: &[AdStructure]) -> Result<Option<EddystoneUrl>, AdError> {
    let Some(s) = structures
        .iter()
        .find(|s| s.ad_type == AD_SERVICE_DATA_16BIT && s.value.starts_with(&EDDYSTONE_UUID))
    else {
        return Ok(None);
    };
    let frame = &s.value[2..];
    let Some(&frame_type) = frame.first() else {
        return Err(AdError::Malformed("Eddystone frame (no frame type)"));
    };
    if frame_type != EDDYSTONE_URL_FRAME {
        return Err(AdError::UnknownFrameType(frame_type));
    }
    if frame.len() < 3 {
        return Err(AdError::Malformed("Eddystone-URL frame (missing scheme)"));
    }
    let url = EddystoneUrl {
        tx_power: frame[1] as i8,
        scheme: frame[2],
        body: frame[3..].to_vec(),
    };
    // reject reserved codes up front
    url.url()?;
    Ok(Some(url))
}

/// Decoded beacon content, for display.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Beacon {
    IBeacon(IBeacon),
    EddystoneUrl(EddystoneUrl),
}

impl fmt::Display for Beacon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beacon::IBeacon(b) => write!(
                f,
                "ibeacon uuid={} major={} (0x{:04x}) minor={} (0x{:04x}) power={}dBm",
                b.uuid_string(),
                b.major,
                b.major,
                b.minor,
                b.minor,
                b.measured_power
            ),
            Beacon::EddystoneUrl(u) => write!(
                f,
                "eddystone-url url={} tx_power={}dBm",
                u.url().unwrap_or_default(),
                u.tx_power
            ),
        }
    }
}

/// Human-readable lines describing advertising data: one per AD structure,
/// then one per recognised beacon, then any parse problems.
pub fn describe(adv_data: &[u8]) -> Vec<String> {
    let structures = match parse_ad_structures(adv_data) {
        Ok(s) => s,
        Err(e) => return vec![format!("ad-error {e}")],
    };
    let mut lines: Vec<String> = structures
        .iter()
        .map(|s| format!("ad type=0x{:02x} value={}", s.ad_type, hex::encode(&s.value)))
        .collect();
    match parse_ibeacon(&structures) {
        Ok(Some(b)) => lines.push(Beacon::IBeacon(b).to_string()),
        Ok(None) => {}
        Err(e) => lines.push(format!("ad-error {e}")),
    }
    match parse_eddystone_url(&structures) {
        Ok(Some(u)) => lines.push(Beacon::EddystoneUrl(u).to_string()),
        Ok(None) => {}
        Err(e) => lines.push(format!("ad-note {e}")),
    }
    lines
}
