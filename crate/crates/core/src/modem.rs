//! Binary (G)FSK modulation and non-coherent demodulation.
//!
//! The receive chain is a quadrature discriminator ([`demodulate_fm`])
//! followed by [`recover_bits`], which integrates the instantaneous
//! frequency over each symbol, tracks symbol timing with an early/late gate
//! and slices against a median-tracked DC level.

use std::f64::consts::PI;

use num_complex::Complex32;
use thiserror::Error;

use crate::iqio::{self, IqBuffer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModemError {
    #[error("no bits to modulate")]
    EmptyBits,
    #[error("need at least two samples to measure frequency")]
    TooShort,
    #[error("not enough samples for a single symbol")]
    NoSymbols,
    #[error("sync pattern must be at least 8 bits, got {0}")]
    PatternTooShort(usize),
    #[error("max_bit_errors {max} must be below a quarter of the pattern length {len}")]
    ToleranceTooLarge { max: usize, len: usize },
    #[error("bit values must be 0 or 1 (index {0})")]
    NotABit(usize),
    #[error("start offsets must be strictly increasing and match the bit count")]
    BadOffsets,
    #[error("invalid modem parameters: {0}")]
    BadParams(&'static str),
}

/// Physical-layer parameters shared by modulator and demodulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModemParams {
    /// Symbols per second.
    pub symbol_rate: f64,
    /// Peak-to-peak deviation over symbol rate; deviation is `h * Rs / 2`.
    pub modulation_index: f64,
    pub samples_per_symbol: usize,
    /// Gaussian filter bandwidth-time product, `None` for rectangular 2-FSK.
    pub gaussian_bt: Option<f64>,
}

impl ModemParams {
    /// BLE LE 1M: 1 Msym/s, h = 0.5, BT = 0.5, 4 samples per symbol.
    pub const fn ble() -> Self {
        ModemParams {
            symbol_rate: 1e6,
            modulation_index: 0.5,
            samples_per_symbol: 4,
            gaussian_bt: Some(0.5),
        }
    }

    /// CC2511 (Wixel) style 2-FSK at 250 kbit/s with 127 kHz deviation.
    pub const fn wixel() -> Self {
        ModemParams {
            symbol_rate: 250e3,
            modulation_index: 2.0 * 127e3 / 250e3,
            samples_per_symbol: 8,
            gaussian_bt: None,
        }
    }

    /// Wixel preset at a different bit rate (up to 350 kbit/s), keeping the
    /// 127 kHz deviation.
    pub fn wixel_at(bit_rate: f64) -> Result<Self, ModemError> {
        if !(bit_rate > 0.0 && bit_rate <= 350e3) {
            return Err(ModemError::BadParams("Wixel bit rate must be in (0, 350 kb/s]"));
        }
        Ok(ModemParams {
            symbol_rate: bit_rate,
            modulation_index: 2.0 * 127e3 / bit_rate,
            ..Self::wixel()
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    /// Peak frequency deviation in Hz.
    pub fn deviation(&self) -> f64 {
        self.modulation_index * self.symbol_rate / 2.0
    }

    pub fn validate(&self) -> Result<(), ModemError> {
        if !(self.symbol_rate.is_finite() && self.symbol_rate > 0.0) {
            return Err(ModemError::BadParams("symbol_rate must be positive"));
        }
        if !(self.modulation_index.is_finite() && self.modulation_index > 0.0) {
            return Err(ModemError::BadParams("modulation_index must be positive"));
        }
        if self.samples_per_symbol < 2 {
            return Err(ModemError::BadParams("samples_per_symbol must be >= 2"));
        }
        if let Some(bt) = self.gaussian_bt {
            if !(bt > 0.0 && bt <= 1.0) {
                return Err(ModemError::BadParams("gaussian_bt must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Hard bits in air order, optionally tagged with the sample index at which
/// each symbol starts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitStream {
    bits: Vec<u8>,
    start_offsets: Option<Vec<usize>>,
}

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self, ModemError> {
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(ModemError::NotABit(i));
        }
        Ok(BitStream {
            bits,
            start_offsets: None,
        })
    }

    pub fn with_offsets(bits: Vec<u8>, offsets: Vec<usize>) -> Result<Self, ModemError> {
        let mut s = BitStream::new(bits)?;
        if offsets.len() != s.bits.len() || offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModemError::BadOffsets);
        }
        s.start_offsets = Some(offsets);
        Ok(s)
    }

    /// Bits of `bytes`, least significant bit of each byte first.
    pub fn from_bytes_lsb(bytes: &[u8]) -> Self {
        BitStream {
            bits: bytes_to_bits_lsb(bytes),
            start_offsets: None,
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn start_offsets(&self) -> Option<&[usize]> {
        self.start_offsets.as_deref()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn extend_from_bytes_lsb(&mut self, bytes: &[u8]) {
        self.start_offsets = None;
        self.bits.extend(bytes_to_bits_lsb(bytes));
    }
}

pub fn bytes_to_bits_lsb(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len() * 8);
    for b in bytes {
        for i in 0..8 {
            out.push((b >> i) & 1);
        }
    }
    out
}

/// Packs bits LSB-first; a trailing partial byte is zero padded.
pub fn bits_to_bytes_lsb(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i)))
        .collect()
}

/// Gaussian pulse-shaping taps spanning four symbols, unit DC gain.
fn gaussian_taps(bt: f64, sps: usize) -> Vec<f64> {
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt) * sps as f64;
    let half = 2 * sps;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Normalized frequency trajectory (+1 for a 1, -1 for a 0) per sample.
fn frequency_pulse(bits: &[u8], p: &ModemParams) -> Vec<f64> {
    let sps = p.samples_per_symbol;
    let nrz: Vec<f64> = bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(if b == 1 { 1.0 } else { -1.0 }, sps))
        .collect();
    let Some(bt) = p.gaussian_bt else {
        return nrz;
    };
    let taps = gaussian_taps(bt, sps);
    let half = taps.len() / 2;
    let last = nrz.len() - 1;
    // Edges extended with the first and last symbol so the output is
    // exactly bits * sps long and settles on the outermost bits.
    (0..nrz.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .map(|(k, t)| {
                    let idx = (n + k).saturating_sub(half).min(last);
                    t * nrz[idx]
                })
                .sum()
        })
        .collect()
}

/// Continuous-phase FSK modulation at unit amplitude.
///
/// The output is exactly `bits.len() * samples_per_symbol` samples long.
/// Sample `n` already carries the phase increment of its own frequency value,
/// so the first sample sits at `exp(j * step)`.
pub fn modulate(bits: &BitStream, p: &ModemParams) -> Result<IqBuffer, ModemError> {
    p.validate()?;
    if bits.is_empty() {
        return Err(ModemError::EmptyBits);
    }
    let fs = p.sample_rate();
    let k = 2.0 * PI * p.deviation() / fs;
    let mut phase = 0.0f64;
    let samples = frequency_pulse(bits.bits(), p)
        .into_iter()
        .map(|f| {
            phase = (phase + k * f).rem_euclid(2.0 * PI);
            Complex32::new(phase.cos() as f32, phase.sin() as f32)
        })
        .collect();
    Ok(IqBuffer::new(samples, fs).expect("positive rate, finite samples"))
}

/// Quadrature discriminator: `arg(x[n] * conj(x[n-1])) * fs / 2pi`.
///
/// Output has one fewer element than the input. A zero sample on either side
/// yields 0 Hz rather than an error; recordings routinely contain silence.
pub fn demodulate_fm(buf: &IqBuffer) -> Result<Vec<f32>, ModemError> {
    if buf.len() < 2 {
        return Err(ModemError::TooShort);
    }
    Ok(discriminate(&buf.samples, buf.sample_rate))
}

/// Half-length of the channel filter, in symbols.
const CHANNEL_FILTER_SPAN: usize = 3;

/// Zero-phase low-pass passing `deviation + symbol_rate / 2`, applied
/// ahead of the discriminator to keep out-of-band noise out of the
/// frequency estimate.
pub fn channel_filter(samples: &[Complex32], p: &ModemParams) -> Vec<Complex32> {
    let fc = ((p.deviation() + 0.6 * p.symbol_rate) / p.sample_rate()).min(0.5);
    if fc >= 0.5 {
        return samples.to_vec();
    }
    let half = CHANNEL_FILTER_SPAN * p.samples_per_symbol;
    let taps = iqio::kaiser_lowpass(fc, half, 6.0, 1.0);
    let n = samples.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mut acc = Complex32::new(0.0, 0.0);
            for (j, s) in samples[lo..hi].iter().enumerate() {
                acc += s * taps[lo + j + half - i];
            }
            acc
        })
        .collect()
}

/// Channel filter followed by the discriminator.
pub fn filtered_discriminator(samples: &[Complex32], p: &ModemParams) -> Vec<f32> {
    discriminate(&channel_filter(samples, p), p.sample_rate())
}

pub(crate) fn discriminate(samples: &[Complex32], sample_rate: f64) -> Vec<f32> {
    let scale = (sample_rate / (2.0 * PI)) as f32;
    samples
        .windows(2)
        .map(|w| {
            let d = w[1] * w[0].conj();
            if d.re == 0.0 && d.im == 0.0 {
                0.0
            } else {
                d.im.atan2(d.re) * scale
            }
        })
        .collect()
}

/// Symbols used to pick the initial sampling phase.
const ACQUISITION_SYMBOLS: usize = 256;
/// First-order timing loop gain.
const TIMING_GAIN: f64 = 0.05;
/// Sliding window (symbols) for the median DC estimate.
const DC_WINDOW: usize = 64;
/// The DC correction never exceeds this fraction of the deviation, so runs
/// of identical bits are not mistaken for carrier offset.
const DC_LIMIT: f32 = 0.25;

/// Slice instantaneous frequency into bits.
///
/// Each symbol value is the mean frequency over a one-symbol window. The
/// window phase is chosen by maximum energy over the first symbols (or taken
/// from `start_phase_hint`, the IQ sample index where the first symbol
/// begins) and then tracked by an early/late gate. The slicing threshold is
/// the running median of symbol values.
pub fn recover_bits(freq: &[f32], p: &ModemParams, start_phase_hint: Option<usize>) -> Result<BitStream, ModemError> {
    p.validate()?;
    let sps = p.samples_per_symbol;
    if freq.len() + 1 < sps {
        return Err(ModemError::NoSymbols);
    }
    let box_avg = BoxAverage::new(freq, sps);
    let dev = p.deviation() as f32;

    // Window start positions live in discriminator-index space; the window
    // for the symbol beginning at IQ sample s starts at index s - 1.
    let mut tau = match start_phase_hint {
        Some(s) => s as f64 - 1.0,
        None => acquire(&box_avg, sps, dev),
    };

    let half = sps as f64 / 2.0;
    let gate = sps as f64 / 4.0;
    let limit = freq.len() as f64;
    let mut values = Vec::with_capacity(freq.len() / sps + 1);
    let mut offsets = Vec::with_capacity(freq.len() / sps + 1);
    let mut last_offset: Option<usize> = None;
    while tau + half <= limit {
        let v = box_avg.at(tau);
        let early = box_avg.at(tau - gate).abs();
        let late = box_avg.at(tau + gate).abs();
        let sum = early + late;
        let err = if sum > 0.0 { (late - early) / sum } else { 0.0 };

        let mut off = (tau + 1.0).round().max(0.0) as usize;
        if let Some(prev) = last_offset {
            off = off.max(prev + 1);
        }
        last_offset = Some(off);
        offsets.push(off);
        values.push(v);

        tau += sps as f64 + TIMING_GAIN * err as f64 * sps as f64;
    }
    if values.is_empty() {
        return Err(ModemError::NoSymbols);
    }

    let dc = running_median(&values, DC_WINDOW);
    let cap = DC_LIMIT * dev;
    let bits = values
        .iter()
        .zip(dc)
        .map(|(v, m)| u8::from(v - m.clamp(-cap, cap) > 0.0))
        .collect();
    Ok(BitStream {
        bits,
        start_offsets: Some(offsets),
    })
}

fn acquire(box_avg: &BoxAverage, sps: usize, dev: f32) -> f64 {
    let clip = 2.0 * dev;
    let mut best = (-1.0, f32::NEG_INFINITY);
    for phase in 0..sps {
        let tau0 = phase as f64 - 1.0;
        let energy: f32 = (0..ACQUISITION_SYMBOLS)
            .map(|k| tau0 + (k * sps) as f64)
            .take_while(|&t| t + sps as f64 / 2.0 <= box_avg.len() as f64)
            .map(|t| box_avg.at(t).abs().min(clip))
            .sum();
        // ties (e.g. constant data) keep the earliest phase
        if energy > best.1 * (1.0 + 1e-5) + 1e-9 {
            best = (tau0, energy);
        }
    }
    best.0
}

/// Mean of `sps` consecutive discriminator samples, with the series extended
/// at both ends by its edge values. Evaluated at fractional positions by
/// linear interpolation.
struct BoxAverage {
    prefix: Vec<f64>,
    first: f64,
    last: f64,
    sps: usize,
    n: usize,
}

impl BoxAverage {
    fn new(freq: &[f32], sps: usize) -> Self {
        let mut prefix = Vec::with_capacity(freq.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0f64;
        for &f in freq {
            acc += f as f64;
            prefix.push(acc);
        }
        BoxAverage {
            prefix,
            first: freq.first().copied().unwrap_or(0.0) as f64,
            last: freq.last().copied().unwrap_or(0.0) as f64,
            sps,
            n: freq.len(),
        }
    }

    fn len(&self) -> usize {
        self.n
    }

    /// Sum of freq[0..i) with edge extension for i outside [0, n].
    fn cumulative(&self, i: i64) -> f64 {
        if i < 0 {
            i as f64 * self.first
        } else if i as usize > self.n {
            self.prefix[self.n] + (i as usize - self.n) as f64 * self.last
        } else {
            self.prefix[i as usize]
        }
    }

    fn at_int(&self, start: i64) -> f64 {
        (self.cumulative(start + self.sps as i64) - self.cumulative(start)) / self.sps as f64
    }

    fn at(&self, pos: f64) -> f32 {
        let i = pos.floor();
        let frac = pos - i;
        let i = i as i64;
        let a = self.at_int(i);
        if frac == 0.0 {
            return a as f32;
        }
        let b = self.at_int(i + 1);
        (a + (b - a) * frac) as f32
    }
}

/// Median over a centred window of `window` values (shrunk at the edges).
fn running_median(values: &[f32], window: usize) -> Vec<f32> {
    let n = values.len();
    let half = window / 2;
    let mut sorted: Vec<f32> = Vec::with_capacity(window + 1);
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize); // current window [lo, hi)
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + half).min(n);
        while hi < want_hi {
            let v = values[hi];
            let pos = sorted.partition_point(|&x| x < v);
            sorted.insert(pos, v);
            hi += 1;
        }
        while lo < want_lo {
            let v = values[lo];
            let pos = sorted.partition_point(|&x| x < v);
            sorted.remove(pos);
            lo += 1;
        }
        let m = sorted.len();
        out.push(if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        });
    }
    out
}

/// Every index where `bits[i..i+len]` is within `max_bit_errors` of `pattern`.
pub fn correlate_pattern(bits: &BitStream, pattern: &[u8], max_bit_errors: usize) -> Result<Vec<usize>, ModemError> {
    correlate_slice(bits.bits(), pattern, max_bit_errors)
}

pub(crate) fn correlate_slice(bits: &[u8], pattern: &[u8], max_bit_errors: usize) -> Result<Vec<usize>, ModemError> {
    let len = pattern.len();
    if len < 8 {
        return Err(ModemError::PatternTooShort(len));
    }
    if max_bit_errors * 4 >= len {
        return Err(ModemError::ToleranceTooLarge {
            max: max_bit_errors,
            len,
        });
    }
    if let Some(i) = pattern.iter().position(|&b| b > 1) {
        return Err(ModemError::NotABit(i));
    }
    if bits.len() < len {
        return Ok(Vec::new());
    }
    if len <= 64 {
        // Shift register: the newest bit enters at the top so that after
        // `len` bits the register holds pattern[0] in bit 0.
        let target = pattern
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i));
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        let mut reg = 0u64;
        let mut hits = Vec::new();
        for (i, &b) in bits.iter().enumerate() {
            reg = (reg >> 1) | ((b as u64 & 1) << (len - 1));
            if i + 1 >= len && ((reg ^ target) & mask).count_ones() as usize <= max_bit_errors {
                hits.push(i + 1 - len);
            }
        }
        Ok(hits)
    } else {
        Ok((0..=bits.len() - len)
            .filter(|&i| bits[i..i + len].iter().zip(pattern).filter(|(a, b)| a != b).count() <= max_bit_errors)
            .collect())
    }
}
