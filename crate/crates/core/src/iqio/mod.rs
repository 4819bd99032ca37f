//! IQ sample recordings.
//!
//! Two on-disk encodings are supported, both headerless and interleaved:
//!
//! * `.cs8`  - signed 8-bit I,Q pairs (HackRF native). Decoded as `value / 128`.
//! * `.cf32` - little-endian 32-bit float I,Q pairs (flowgraph file sink).
//!
//! A small `key=value` sidecar carries the sample rate, center frequency and
//! format, since neither encoding stores them.

mod resample;
mod sidecar;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex32;
use thiserror::Error;

pub(crate) use resample::kaiser_lowpass;
pub use resample::{out_of_band_fraction, rational_ratio, resample, resample_strict};
pub use sidecar::{read_sidecar, sidecar_path, write_sidecar, Sidecar};

/// Working rate used when nothing else is known about a recording.
pub const DEFAULT_SAMPLE_RATE: f64 = 4e6;

/// HackRF One instantaneous bandwidth ceiling.
pub const HACKRF_MAX_SAMPLE_RATE: f64 = 20e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IqError {
    #[error("input is empty")]
    EmptyInput,
    #[error("{len} bytes is not a whole number of {pair}-byte IQ pairs")]
    OddLength { len: usize, pair: usize },
    #[error("sample {index} is outside [-1, 1] and cannot be stored as 8-bit")]
    SampleOutOfRange { index: usize },
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("rate ratio {to}/{from} is not a ratio of integers <= 64")]
    IrrationalRatio { from: f64, to: f64 },
    #[error("{:.1}% of the signal energy lies beyond the new Nyquist band", fraction * 100.0)]
    AliasingRisk { fraction: f64 },
    #[error("unknown IQ format `{0}` (expected cs8 or cf32)")]
    UnknownFormat(String),
    #[error("bad sidecar: {0}")]
    Sidecar(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for IqError {
    fn from(e: std::io::Error) -> Self {
        IqError::Io(e.to_string())
    }
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IqFormat {
    /// Signed 8-bit I,Q pairs.
    Int8Interleaved,
    /// Little-endian `f32` I,Q pairs.
    Float32Interleaved,
}

impl IqFormat {
    /// Encoded size of one complex sample.
    pub fn pair_size(self) -> usize {
        match self {
            IqFormat::Int8Interleaved => 2,
            IqFormat::Float32Interleaved => 8,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            IqFormat::Int8Interleaved => "cs8",
            IqFormat::Float32Interleaved => "cf32",
        }
    }

    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<IqFormat> {
        path.extension()?.to_str()?.parse().ok()
    }
}

impl fmt::Display for IqFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for IqFormat {
    type Err = IqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cs8" | "int8" | "s8" => Ok(IqFormat::Int8Interleaved),
            "cf32" | "float32" | "fc32" => Ok(IqFormat::Float32Interleaved),
            other => Err(IqError::UnknownFormat(other.to_string())),
        }
    }
}

/// Complex baseband samples plus the metadata needed to interpret them.
///
/// `center_freq` is informational only. All processing is at baseband.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    pub samples: Vec<Complex32>,
    pub sample_rate: f64,
    pub center_freq: f64,
    pub origin: String,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex32>, sample_rate: f64) -> Result<Self, IqError> {
        check_rate(sample_rate)?;
        if let Some(index) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(IqError::NonFinite { index });
        }
        Ok(IqBuffer {
            samples,
            sample_rate,
            center_freq: 0.0,
            origin: String::new(),
        })
    }

    pub fn with_center_freq(mut self, hz: f64) -> Self {
        self.center_freq = hz;
        self
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = origin.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Mean `|x|^2` over the buffer, 0 for an empty buffer.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(samples: &[Complex32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr() as f64).sum::<f64>() / samples.len() as f64
}

pub(crate) fn check_rate(rate: f64) -> Result<(), IqError> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(IqError::BadSampleRate(rate))
    }
}

/// Decode raw bytes into a buffer.
pub fn read_iq(bytes: &[u8], format: IqFormat, sample_rate: f64, center_freq: f64) -> Result<IqBuffer, IqError> {
    check_rate(sample_rate)?;
    let samples = decode_samples(bytes, format)?;
    if samples.is_empty() {
        return Err(IqError::EmptyInput);
    }
    Ok(IqBuffer {
        samples,
        sample_rate,
        center_freq,
        origin: String::new(),
    })
}

/// Decode a byte slice into samples without wrapping them in a buffer.
///
/// An empty slice decodes to an empty vector; streaming readers use this for
/// chunks.
pub fn decode_samples(bytes: &[u8], format: IqFormat) -> Result<Vec<Complex32>, IqError> {
    let pair = format.pair_size();
    if bytes.len() % pair != 0 {
        return Err(IqError::OddLength { len: bytes.len(), pair });
    }
    let mut out = Vec::with_capacity(bytes.len() / pair);
    match format {
        IqFormat::Int8Interleaved => {
            out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|c| Complex32::new(c[0] as i8 as f32 / 128.0, c[1] as i8 as f32 / 128.0)),
            );
        }
        IqFormat::Float32Interleaved => {
            for (index, c) in bytes.chunks_exact(8).enumerate() {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                if !(re.is_finite() && im.is_finite()) {
                    return Err(IqError::NonFinite { index });
                }
                out.push(Complex32::new(re, im));
            }
        }
    }
    Ok(out)
}

/// Encode a buffer. 8-bit output requires every component in `[-1, 1]`.
pub fn write_iq(buf: &IqBuffer, format: IqFormat) -> Result<Vec<u8>, IqError> {
    encode_samples(&buf.samples, format)
}

pub fn encode_samples(samples: &[Complex32], format: IqFormat) -> Result<Vec<u8>, IqError> {
    let mut out = Vec::with_capacity(samples.len() * format.pair_size());
    match format {
        IqFormat::Int8Interleaved => {
            for (index, s) in samples.iter().enumerate() {
                for v in [s.re, s.im] {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(IqError::SampleOutOfRange { index });
                    }
                    out.push(quantize_i8(v) as u8);
                }
            }
        }
        IqFormat::Float32Interleaved => {
            for s in samples {
                out.extend_from_slice(&s.re.to_le_bytes());
                out.extend_from_slice(&s.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn quantize_i8(v: f32) -> i8 {
    // +1.0 has no exact code; it saturates to 127/128.
    (v * 128.0).round().clamp(-128.0, 127.0) as i8
}

/// Work out how to read `path`: explicit arguments win, then the sidecar,
/// then the extension for the format and [`DEFAULT_SAMPLE_RATE`] for the
/// rate.
pub fn resolve_source(path: &Path, format: Option<IqFormat>, sample_rate: Option<f64>) -> Result<Sidecar, IqError> {
    let meta = read_sidecar(&sidecar_path(path)).ok();
    let format = format
        .or_else(|| meta.as_ref().map(|m| m.format))
        .or_else(|| IqFormat::from_path(path))
        .ok_or_else(|| IqError::UnknownFormat(path.display().to_string()))?;
    let sample_rate = sample_rate
        .or_else(|| meta.as_ref().map(|m| m.sample_rate))
        .unwrap_or(DEFAULT_SAMPLE_RATE);
    check_rate(sample_rate)?;
    let center_freq = meta.as_ref().map(|m| m.center_freq).unwrap_or(0.0);
    Ok(Sidecar {
        sample_rate,
        center_freq,
        format,
    })
}

/// Load a whole IQ file, resolving format and rate as [`resolve_source`].
pub fn load_iq_file(path: &Path, format: Option<IqFormat>, sample_rate: Option<f64>) -> Result<IqBuffer, IqError> {
    let src = resolve_source(path, format, sample_rate)?;
    let bytes = std::fs::read(path)?;
    Ok(read_iq(&bytes, src.format, src.sample_rate, src.center_freq)?.with_origin(path.display().to_string()))
}

/// Write samples plus sidecar.
pub fn save_iq_file(path: &Path, buf: &IqBuffer, format: IqFormat) -> Result<(), IqError> {
    let bytes = write_iq(buf, format)?;
    std::fs::write(path, bytes)?;
    write_sidecar(
        &sidecar_path(path),
        &Sidecar {
            sample_rate: buf.sample_rate,
            center_freq: buf.center_freq,
            format,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int8_scaling() {
        let buf = read_iq(&[0x7F, 0x00, 0x81, 0x00], IqFormat::Int8Interleaved, 4e6, 0.0).unwrap();
        assert_eq!(buf.len(), 2);
        assert!((buf.samples[0].re - 0.9921875).abs() < 1e-7);
        assert!((buf.samples[1].re + 0.9921875).abs() < 1e-7);
        assert_eq!(buf.samples[0].im, 0.0);
    }

    #[test]
    fn empty_and_odd() {
        assert_eq!(
            read_iq(&[], IqFormat::Int8Interleaved, 4e6, 0.0),
            Err(IqError::EmptyInput)
        );
        assert!(matches!(
            read_iq(&[1, 2, 3], IqFormat::Int8Interleaved, 4e6, 0.0),
            Err(IqError::OddLength { len: 3, pair: 2 })
        ));
        assert!(matches!(
            read_iq(&[0; 12], IqFormat::Float32Interleaved, 4e6, 0.0),
            Err(IqError::OddLength { .. })
        ));
    }

    #[test]
    fn float_pair() {
        let mut bytes = 1.0f32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&(-0.5f32).to_le_bytes());
        let buf = read_iq(&bytes, IqFormat::Float32Interleaved, 1e6, 2.4499e9).unwrap();
        assert_eq!(buf.samples, vec![Complex32::new(1.0, -0.5)]);
        assert_eq!(buf.center_freq, 2.4499e9);
    }

    #[test]
    fn nan_rejected() {
        let mut bytes = f32::NAN.to_le_bytes().to_vec();
        bytes.extend_from_slice(&0f32.to_le_bytes());
        assert_eq!(
            read_iq(&bytes, IqFormat::Float32Interleaved, 1e6, 0.0),
            Err(IqError::NonFinite { index: 0 })
        );
    }

    #[test]
    fn out_of_range_int8() {
        let buf = IqBuffer::new(vec![Complex32::new(2.0, 0.0)], 1e6).unwrap();
        assert_eq!(
            write_iq(&buf, IqFormat::Int8Interleaved),
            Err(IqError::SampleOutOfRange { index: 0 })
        );
        // float has no range restriction
        assert!(write_iq(&buf, IqFormat::Float32Interleaved).is_ok());
    }

    #[test]
    fn every_int8_level_round_trips() {
        // All 256 representable levels: decode then encode is the identity and
        // the reconstruction error of any input is within one step.
        let bytes: Vec<u8> = (0..=255u8).flat_map(|b| [b, b.wrapping_add(1)]).collect();
        let buf = read_iq(&bytes, IqFormat::Int8Interleaved, 1e6, 0.0).unwrap();
        assert_eq!(write_iq(&buf, IqFormat::Int8Interleaved).unwrap(), bytes);
        for level in 0..=2560 {
            let v = -1.0 + level as f32 / 1280.0;
            let back = quantize_i8(v) as f32 / 128.0;
            assert!((back - v).abs() <= 1.0 / 128.0 + 1e-7, "{v} -> {back}");
        }
    }

    #[test]
    fn bad_rate() {
        assert_eq!(
            read_iq(&[0, 0], IqFormat::Int8Interleaved, 0.0, 0.0),
            Err(IqError::BadSampleRate(0.0))
        );
    }

    #[test]
    fn format_names() {
        assert_eq!("cs8".parse::<IqFormat>().unwrap(), IqFormat::Int8Interleaved);
        assert_eq!("CF32".parse::<IqFormat>().unwrap(), IqFormat::Float32Interleaved);
        assert!("wav".parse::<IqFormat>().is_err());
        assert_eq!(
            IqFormat::from_path(Path::new("rec1.cf32")),
            Some(IqFormat::Float32Interleaved)
        );
    }
}
