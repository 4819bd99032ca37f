//! Receive chains built from the modem and link codecs.
//!
//! Long captures are split into bursts by a power detector; each burst is
//! discriminated, sliced and searched for the protocol's sync word. Short
//! single-packet buffers (the replay lab) skip burst detection and are
//! processed whole.

use std::io::Read;
use std::ops::Range;

use num_complex::Complex32;

use crate::ble::{self, AdvChannel, ParsedPdu, ADV_ACCESS_ADDRESS};
use crate::iqio::{self, IqBuffer, IqError, IqFormat};
use crate::modem::{self, BitStream, ModemParams};
use crate::mpdu::{self, Mpdu};

/// Power-envelope burst detector.
#[derive(Debug, Clone, Copy)]
pub struct BurstDetector {
    /// Envelope smoothing window in symbols.
    pub smooth_symbols: usize,
    /// Bursts are padded by this many symbols on each side.
    pub pad_symbols: usize,
    /// Bursts shorter than this are dropped.
    pub min_symbols: usize,
    /// Required peak-to-floor power ratio before anything is reported.
    pub min_ratio: f64,
}

impl Default for BurstDetector {
    fn default() -> Self {
        BurstDetector {
            smooth_symbols: 8,
            pad_symbols: 8,
            min_symbols: 40,
            min_ratio: 2.0,
        }
    }
}

impl BurstDetector {
    /// Sample ranges that rise above the noise floor.
    ///
    /// The floor is the 5th percentile of the smoothed envelope; the
    /// threshold sits halfway (in dB) between floor and peak. A floor of
    /// digital silence uses a threshold 30 dB under the peak instead.
    pub fn detect(&self, samples: &[Complex32], sps: usize) -> Vec<Range<usize>> {
        let w = (self.smooth_symbols * sps).max(1);
        if samples.len() < w {
            return Vec::new();
        }
        let mut env = Vec::with_capacity(samples.len() - w + 1);
        let mut acc: f64 = samples[..w].iter().map(|s| s.norm_sqr() as f64).sum();
        env.push(acc);
        for i in w..samples.len() {
            acc += samples[i].norm_sqr() as f64 - samples[i - w].norm_sqr() as f64;
            env.push(acc.max(0.0));
        }
        let step = (w / 2).max(1);
        let mut sampled: Vec<f64> = env.iter().step_by(step).copied().collect();
        let peak = sampled.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Vec::new();
        }
        let k = sampled.len() / 20;
        let floor = *sampled.select_nth_unstable_by(k, |a, b| a.total_cmp(b)).1;
        let threshold = if floor < peak * 1e-6 {
            peak * 1e-3
        } else if peak < self.min_ratio * floor {
            return Vec::new();
        } else {
            (floor * peak).sqrt()
        };

        let pad = self.pad_symbols * sps + w / 2;
        let mut out: Vec<Range<usize>> = Vec::new();
        let mut i = 0;
        while i < env.len() {
            if env[i] <= threshold {
                i += 1;
                continue;
            }
            let start = i;
            while i < env.len() && env[i] > threshold {
                i += 1;
            }
            let r = start.saturating_sub(pad)..(i + w + pad).min(samples.len());
            match out.last_mut() {
                Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
                _ => out.push(r),
            }
        }
        out.retain(|r| r.len() >= self.min_symbols * sps);
        out
    }
}

/// A sync-delimited frame found in a bit stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpan<T> {
    /// First sample of the preamble (relative to the processed buffer).
    pub start_sample: usize,
    /// One past the last sample of the frame.
    pub end_sample: usize,
    /// Bits from the preamble through the end of the frame.
    pub bits: Vec<u8>,
    pub frame: T,
}

/// Search `bits` for `sync` and hand what follows to `parse`, which returns
/// the frame and how many bits it used. Matches inside an accepted frame are
/// skipped.
fn frames_in_bits<T>(
    stream: &BitStream,
    sync: &[u8],
    max_errors: usize,
    preamble_bits: usize,
    sps: usize,
    mut parse: impl FnMut(&[u8]) -> Option<(T, usize)>,
) -> Vec<FrameSpan<T>> {
    let bits = stream.bits();
    let offsets = stream.start_offsets().expect("recovered streams carry offsets");
    let hits = modem::correlate_slice(bits, sync, max_errors).expect("valid sync pattern");
    let mut out = Vec::new();
    let mut next_allowed = 0;
    for h in hits {
        if h < next_allowed {
            continue;
        }
        let body = h + sync.len();
        let Some((frame, used)) = parse(&bits[body..]) else {
            continue;
        };
        let first = h.saturating_sub(preamble_bits);
        let end = body + used;
        out.push(FrameSpan {
            start_sample: offsets[first],
            end_sample: offsets[end - 1] + sps,
            bits: bits[first..end].to_vec(),
            frame,
        });
        next_allowed = end;
    }
    out
}

fn slice_segment(samples: &[Complex32], p: &ModemParams) -> Option<BitStream> {
    if samples.len() < 2 {
        return None;
    }
    let freq = modem::filtered_discriminator(samples, p);
    modem::recover_bits(&freq, p, None).ok()
}

fn shift<T>(mut f: FrameSpan<T>, base: usize) -> FrameSpan<T> {
    f.start_sample += base;
    f.end_sample += base;
    f
}

/// BLE advertising-channel receiver.
#[derive(Debug, Clone)]
pub struct BleSniffer {
    pub params: ModemParams,
    pub channel: AdvChannel,
    pub access_address: u32,
    /// Access-address bit errors tolerated by the correlator.
    pub max_aa_errors: usize,
    pub detector: BurstDetector,
}

/// An advertising packet recovered from IQ.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedAdv {
    pub span: FrameSpan<ParsedPdu>,
    pub channel: u8,
    pub access_address: u32,
    pub sample_rate: f64,
}

impl DecodedAdv {
    /// Microseconds from the start of the capture to the preamble.
    pub fn timestamp_us(&self) -> u64 {
        (self.span.start_sample as f64 / self.sample_rate * 1e6) as u64
    }

    pub fn crc_ok(&self) -> bool {
        self.span.frame.crc_ok
    }

    pub fn log_line(&self, packet_number: u64) -> ble::SnifferLine {
        ble::SnifferLine {
            timestamp_us: self.timestamp_us(),
            packet_number,
            channel: self.channel,
            access_address: self.access_address,
            pdu: self.span.frame.pdu.clone(),
            crc_ok: self.crc_ok(),
        }
    }
}

impl BleSniffer {
    pub fn new(channel: AdvChannel) -> Self {
        BleSniffer {
            params: ModemParams::ble(),
            channel,
            access_address: ADV_ACCESS_ADDRESS,
            max_aa_errors: 0,
            detector: BurstDetector {
                min_symbols: 80,
                ..BurstDetector::default()
            },
        }
    }

    /// Decode packets from a buffer already at the modem's sample rate.
    pub fn decode_samples(&self, samples: &[Complex32]) -> Vec<DecodedAdv> {
        let sps = self.params.samples_per_symbol;
        self.detector
            .detect(samples, sps)
            .into_iter()
            .flat_map(|r| {
                let base = r.start;
                self.decode_segment(&samples[r]).into_iter().map(move |mut d| {
                    d.span = shift(d.span, base);
                    d
                })
            })
            .collect()
    }

    /// Decode one segment without burst detection.
    pub fn decode_segment(&self, samples: &[Complex32]) -> Vec<DecodedAdv> {
        let Some(stream) = slice_segment(samples, &self.params) else {
            return Vec::new();
        };
        let aa = ble::access_address_bits(self.access_address);
        let ch = self.channel.index;
        frames_in_bits(
            &stream,
            &aa,
            self.max_aa_errors,
            8,
            self.params.samples_per_symbol,
            |b| ble::decode_after_access_address(b, ch).ok(),
        )
        .into_iter()
        .map(|span| DecodedAdv {
            span,
            channel: ch,
            access_address: self.access_address,
            sample_rate: self.params.sample_rate(),
        })
        .collect()
    }

    /// Decode a buffer at any rationally related sample rate.
    pub fn decode(&self, buf: &IqBuffer) -> Result<Vec<DecodedAdv>, IqError> {
        let working = to_working_rate(buf, &self.params)?;
        Ok(self.decode_samples(&working.samples))
    }
}

fn to_working_rate(buf: &IqBuffer, p: &ModemParams) -> Result<IqBuffer, IqError> {
    if buf.sample_rate == p.sample_rate() {
        Ok(buf.clone())
    } else {
        iqio::resample(buf, p.sample_rate())
    }
}

/// An MPDU recovered from IQ.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMpdu {
    pub span: FrameSpan<Mpdu>,
    /// The MPDU bytes as received.
    pub raw: Vec<u8>,
}

/// 2-FSK MPDU receiver for the Wixel-style link.
#[derive(Debug, Clone)]
pub struct MpduReceiver {
    pub params: ModemParams,
    pub fcs_init: u16,
    pub max_sync_errors: usize,
    pub detector: BurstDetector,
}

impl MpduReceiver {
    pub fn new(params: ModemParams) -> Self {
        MpduReceiver {
            params,
            fcs_init: mpdu::FCS_INIT,
            max_sync_errors: 0,
            detector: BurstDetector {
                min_symbols: 64,
                ..BurstDetector::default()
            },
        }
    }

    pub fn decode_segment(&self, samples: &[Complex32]) -> Vec<DecodedMpdu> {
        let Some(stream) = slice_segment(samples, &self.params) else {
            return Vec::new();
        };
        let sync = mpdu::sync_bits();
        let init = self.fcs_init;
        frames_in_bits(
            &stream,
            &sync,
            self.max_sync_errors,
            32,
            self.params.samples_per_symbol,
            |b| {
                let (raw, used) = mpdu::decode_after_sync(b).ok()?;
                let m = mpdu::parse_mpdu_with_init(&raw, init).ok()?;
                Some(((m, raw), used))
            },
        )
        .into_iter()
        .map(|s| {
            let (m, raw) = s.frame;
            DecodedMpdu {
                span: FrameSpan {
                    start_sample: s.start_sample,
                    end_sample: s.end_sample,
                    bits: s.bits,
                    frame: m,
                },
                raw,
            }
        })
        .collect()
    }

    pub fn decode_samples(&self, samples: &[Complex32]) -> Vec<DecodedMpdu> {
        let sps = self.params.samples_per_symbol;
        self.detector
            .detect(samples, sps)
            .into_iter()
            .flat_map(|r| {
                let base = r.start;
                self.decode_segment(&samples[r]).into_iter().map(move |mut d| {
                    d.span = shift(d.span, base);
                    d
                })
            })
            .collect()
    }

    pub fn decode(&self, buf: &IqBuffer) -> Result<Vec<DecodedMpdu>, IqError> {
        let working = to_working_rate(buf, &self.params)?;
        Ok(self.decode_samples(&working.samples))
    }
}

/// Silence before and after a synthesized packet, in symbols.
pub const SYNTH_GUARD_SYMBOLS: usize = 40;

/// Modulate one advertising packet with the BLE preset at `amplitude`,
/// surrounded by `guard_symbols` of silence.
pub fn synthesize_adv(
    pdu: &ble::AdvPdu,
    channel: AdvChannel,
    amplitude: f32,
    guard_symbols: usize,
) -> Result<IqBuffer, ble::LinkError> {
    let p = ModemParams::ble();
    let bits = ble::build_adv_packet(pdu, channel)?;
    let body = modem::modulate(&bits, &p).expect("preset parameters are valid");
    let guard = vec![Complex32::new(0.0, 0.0); guard_symbols * p.samples_per_symbol];
    let mut samples = guard.clone();
    samples.extend(body.samples.iter().map(|s| s * amplitude));
    samples.extend(guard);
    Ok(IqBuffer::new(samples, p.sample_rate())
        .expect("finite samples")
        .with_center_freq(channel.center_freq))
}

/// Samples per read when streaming a file through the sniffer.
const STREAM_CHUNK: usize = 1 << 20;

/// Decode a BLE capture from a reader in fixed-size chunks, so arbitrarily
/// long recordings run in bounded memory.
///
/// Consecutive windows overlap by more than one maximum-length packet; a
/// packet is reported by the first window that contains all of it.
pub fn sniff_stream<R: Read>(
    sniffer: &BleSniffer,
    mut reader: R,
    format: IqFormat,
    sample_rate: f64,
) -> Result<Vec<DecodedAdv>, IqError> {
    iqio::check_rate(sample_rate)?;
    let working_rate = sniffer.params.sample_rate();
    let (up, down) = if sample_rate == working_rate {
        (1, 1)
    } else {
        iqio::rational_ratio(sample_rate, working_rate).ok_or(IqError::IrrationalRatio {
            from: sample_rate,
            to: working_rate,
        })?
    };
    let (up, down) = (up as usize, down as usize);
    let sps = sniffer.params.samples_per_symbol;
    // working-rate samples that must be shared between windows
    let overlap_working = (ble::MAX_PACKET_LEN * 8 + 4 * sniffer.detector.smooth_symbols + 64) * sps;
    let overlap = (overlap_working * down).div_ceil(up).div_ceil(down) * down;
    let chunk = STREAM_CHUNK.div_ceil(down) * down;

    let pair = format.pair_size();
    let mut raw = vec![0u8; chunk * pair];
    let mut window: Vec<Complex32> = Vec::new();
    let mut window_start = 0usize; // input-rate index of window[0]
    let mut out = Vec::new();
    let mut last_end = 0usize; // working-rate index
    let mut seen_any = false;
    loop {
        let filled = read_full(&mut reader, &mut raw)?;
        let eof = filled < raw.len();
        if filled % pair != 0 {
            return Err(IqError::OddLength { len: filled, pair });
        }
        seen_any |= filled > 0;
        window.extend(iqio::decode_samples(&raw[..filled], format)?);
        if window.is_empty() {
            break;
        }
        let working: Vec<Complex32> = if up == down {
            window.clone()
        } else {
            let b = IqBuffer::new(window.clone(), sample_rate)?;
            iqio::resample(&b, working_rate)?.samples
        };
        let base = window_start * up / down;
        let cutoff = if eof {
            usize::MAX
        } else {
            base + working.len().saturating_sub(overlap_working)
        };
        for mut d in sniffer.decode_samples(&working) {
            d.span = shift(d.span, base);
            if d.span.start_sample < last_end || d.span.start_sample >= cutoff {
                continue;
            }
            last_end = d.span.end_sample;
            out.push(d);
        }
        if eof {
            break;
        }
        let keep = overlap.min(window.len());
        let drop = window.len() - keep;
        window.drain(..drop);
        window_start += drop;
    }
    if !seen_any {
        return Err(IqError::EmptyInput);
    }
    Ok(out)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, IqError> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(n)
}
