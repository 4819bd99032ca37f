//! Capture recordings: a text index plus a `.cf32` blob of IQ segments.
//!
//! ```text
//! sdrsniff-recording v1 protocol=mpdu symbol_rate=250000 modulation_index=1.016 samples_per_symbol=8 gaussian_bt=none channel=37 sample_rate=2000000 sent=3 packets=2 blob=rec1.cf32
//! index=0 t=1234 crc=ok nbits=192 bits=55555555cb89cb89... iq_offset=0 iq_len=1664
//! ```
//!
//! Bits are packed LSB first, so `bits` is the air-order byte string.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex32;

use super::{LabError, Protocol};
use crate::iqio::{self, IqFormat};
use crate::modem::{bits_to_bytes_lsb, bytes_to_bits_lsb, ModemParams};

pub const RECORDING_MAGIC: &str = "sdrsniff-recording";
pub const RECORDING_VERSION: u32 = 1;

/// One framed capture.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedPacket {
    /// Index of the transmitted packet this capture came from.
    pub index: u64,
    pub timestamp_us: u64,
    pub crc_ok: bool,
    /// Air-order bits from preamble to end of frame.
    pub bits: Vec<u8>,
    pub iq_offset: usize,
    pub iq_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub protocol: Protocol,
    pub modem: ModemParams,
    /// BLE advertising channel; carried but unused for MPDU.
    pub channel: u8,
    /// Packets transmitted while this recording was made.
    pub sent: u64,
    pub packets: Vec<CapturedPacket>,
    /// Concatenated IQ segments at `modem.sample_rate()`.
    pub iq: Vec<Complex32>,
}

impl Recording {
    pub fn new(protocol: Protocol, modem: ModemParams, channel: u8) -> Self {
        Recording {
            protocol,
            modem,
            channel,
            sent: 0,
            packets: Vec::new(),
            iq: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.modem.sample_rate()
    }

    /// Append a capture and its IQ segment.
    pub fn push(&mut self, index: u64, timestamp_us: u64, crc_ok: bool, bits: Vec<u8>, iq: &[Complex32]) {
        self.packets.push(CapturedPacket {
            index,
            timestamp_us,
            crc_ok,
            bits,
            iq_offset: self.iq.len(),
            iq_len: iq.len(),
        });
        self.iq.extend_from_slice(iq);
    }

    pub fn segment(&self, p: &CapturedPacket) -> &[Complex32] {
        &self.iq[p.iq_offset..p.iq_offset + p.iq_len]
    }

    /// The index file contents, with `blob` as the blob file name.
    pub fn index_text(&self, blob: &str) -> String {
        let m = &self.modem;
        let bt = m.gaussian_bt.map_or("none".to_string(), |b| b.to_string());
        let mut s = format!(
            "{RECORDING_MAGIC} v{RECORDING_VERSION} protocol={} symbol_rate={} modulation_index={} \
             samples_per_symbol={} gaussian_bt={bt} channel={} sample_rate={} sent={} packets={} blob={blob}\n",
            self.protocol,
            m.symbol_rate,
            m.modulation_index,
            m.samples_per_symbol,
            self.channel,
            m.sample_rate(),
            self.sent,
            self.packets.len(),
        );
        for p in &self.packets {
            let _ = writeln!(
                s,
                "index={} t={} crc={} nbits={} bits={} iq_offset={} iq_len={}",
                p.index,
                p.timestamp_us,
                if p.crc_ok { "ok" } else { "bad" },
                p.bits.len(),
                hex::encode(bits_to_bytes_lsb(&p.bits)),
                p.iq_offset,
                p.iq_len
            );
        }
        s
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        iqio::encode_samples(&self.iq, IqFormat::Float32Interleaved).expect("cf32 encodes any finite sample")
    }

    /// Write the index to `path` and the blob next to it.
    pub fn save(&self, path: &Path) -> Result<PathBuf, LabError> {
        let blob = blob_path(path);
        let name = blob
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| LabError::Io(format!("bad recording path {}", path.display())))?;
        std::fs::write(path, self.index_text(name))?;
        std::fs::write(&blob, self.blob_bytes())?;
        Ok(blob)
    }

    pub fn load(path: &Path) -> Result<Recording, LabError> {
        let text = std::fs::read_to_string(path)?;
        let (mut rec, blob) = Self::parse_index(&text)?;
        let blob_file = path.parent().unwrap_or(Path::new(".")).join(blob);
        let bytes = std::fs::read(&blob_file)?;
        rec.iq = if bytes.is_empty() {
            Vec::new()
        } else {
            iqio::decode_samples(&bytes, IqFormat::Float32Interleaved)?
        };
        for (i, p) in rec.packets.iter().enumerate() {
            if p.iq_offset + p.iq_len > rec.iq.len() {
                return Err(bad(i + 2, "IQ segment beyond end of blob"));
            }
        }
        Ok(rec)
    }

    /// Parse an index file; the returned recording has no IQ yet.
    pub fn parse_index(text: &str) -> Result<(Recording, String), LabError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let mut words = header.split_whitespace();
        if words.next() != Some(RECORDING_MAGIC) {
            return Err(bad(1, "not a recording"));
        }
        if words.next() != Some(&format!("v{RECORDING_VERSION}")) {
            return Err(bad(1, "unsupported version"));
        }
        let h = Fields::parse(words, 1)?;
        let modem = ModemParams {
            symbol_rate: h.num("symbol_rate")?,
            modulation_index: h.num("modulation_index")?,
            samples_per_symbol: h.num("samples_per_symbol")?,
            gaussian_bt: match h.get("gaussian_bt")? {
                "none" => None,
                v => Some(v.parse().map_err(|_| bad(1, "gaussian_bt"))?),
            },
        };
        modem.validate()?;
        let protocol: Protocol = h.get("protocol")?.parse()?;
        let mut rec = Recording::new(protocol, modem, h.num("channel")?);
        rec.sent = h.num("sent")?;
        let declared: usize = h.num("packets")?;
        let blob = h.get("blob")?.to_string();
        let mut expected_offset = 0;
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let n = i + 2;
            let f = Fields::parse(line.split_whitespace(), n)?;
            let nbits: usize = f.num("nbits")?;
            let bytes = hex::decode(f.get("bits")?).map_err(|e| bad(n, &e.to_string()))?;
            if bytes.len() != nbits.div_ceil(8) {
                return Err(bad(n, "nbits does not match bits"));
            }
            let mut bits = bytes_to_bits_lsb(&bytes);
            bits.truncate(nbits);
            let p = CapturedPacket {
                index: f.num("index")?,
                timestamp_us: f.num("t")?,
                crc_ok: match f.get("crc")? {
                    "ok" => true,
                    "bad" => false,
                    _ => return Err(bad(n, "crc must be ok or bad")),
                },
                bits,
                iq_offset: f.num("iq_offset")?,
                iq_len: f.num("iq_len")?,
            };
            if p.iq_offset != expected_offset {
                return Err(bad(n, "IQ segments must be contiguous"));
            }
            expected_offset += p.iq_len;
            rec.packets.push(p);
        }
        if rec.packets.len() != declared {
            return Err(bad(1, "packet count mismatch"));
        }
        if (rec.sent as usize) < declared {
            return Err(bad(1, "more captures than packets sent"));
        }
        Ok((rec, blob))
    }
}

/// `rec1` -> `rec1.cf32`, `rec1.txt` -> `rec1.txt.cf32`.
pub fn blob_path(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".cf32");
    PathBuf::from(s)
}

fn bad(line: usize, msg: &str) -> LabError {
    LabError::BadRecording {
        line,
        msg: msg.to_string(),
    }
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(words: impl Iterator<Item = &'a str>, line: usize) -> Result<Self, LabError> {
        let pairs = words
            .map(|w| {
                w.split_once('=')
                    .ok_or_else(|| bad(line, &format!("expected key=value, got `{w}`")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Fields { line, pairs })
    }

    fn get(&self, key: &str) -> Result<&'a str, LabError> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(self.line, &format!("missing `{key}`")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, LabError> {
        self.get(key)?
            .parse()
            .map_err(|_| bad(self.line, &format!("bad value for `{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Recording {
        let mut r = Recording::new(Protocol::Mpdu, ModemParams::wixel(), 37);
        r.sent = 6;
        r.push(
            0,
            10,
            true,
            vec![1, 0, 1, 1, 0, 0, 0, 0, 1, 1],
            &[Complex32::new(0.5, -0.25); 3],
        );
        r.push(5, 5_000_020, false, vec![0; 16], &[Complex32::new(0.1, 0.2); 2]);
        r
    }

    #[test]
    fn index_round_trip() {
        let r = sample();
        let text = r.index_text("x.cf32");
        let (mut back, blob) = Recording::parse_index(&text).unwrap();
        assert_eq!(blob, "x.cf32");
        back.iq = r.iq.clone();
        assert_eq!(back, r);
        assert!(text.contains("index=0 t=10 crc=ok nbits=10 bits=0d03 iq_offset=0 iq_len=3\n"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec1");
        let r = sample();
        let blob = r.save(&path).unwrap();
        assert_eq!(blob, dir.path().join("rec1.cf32"));
        assert_eq!(Recording::load(&path).unwrap(), r);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Recording::parse_index("").is_err());
        assert!(Recording::parse_index("hello v1\n").is_err());
        let mut text = sample().index_text("b");
        text = text.replace("packets=2", "packets=3");
        assert!(Recording::parse_index(&text).is_err());
        let text = sample().index_text("b").replace("crc=ok", "crc=maybe");
        assert!(Recording::parse_index(&text).is_err());
    }
}
