//! Synthetic capture-and-replay link.
//!
//! A transmitter sends `n_packets` frames through a first channel into a
//! receiver that records every framed capture (bits and IQ). The recording
//! is then re-transmitted through a second channel to a victim receiver.
//! Packets are independent: each gets its own noise stream derived from
//! `(seed, packet index)`, so the parallel run matches a sequential one.

mod channel;
mod config;
mod recording;
mod report;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex32;
use rayon::prelude::*;
use thiserror::Error;

pub use channel::{apply_channel, apply_channel_stream, snr_from_ebn0, ChannelModel, REMOTE_433_HZ};
pub use config::{CalibrationTargets, ExperimentConfig};
pub use recording::{blob_path, CapturedPacket, Recording, RECORDING_MAGIC, RECORDING_VERSION};
pub use report::{summarize, LinkStats, Ratio, Report};

use crate::ble::{self, AdvChannel, AdvPdu, LinkError, PduType};
use crate::iqio::{self, IqBuffer, IqError};
use crate::modem::{self, BitStream, ModemError, ModemParams};
use crate::mpdu::{self, MpduError, MpduStream};
use crate::pipeline::{BleSniffer, MpduReceiver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("recording holds no packets")]
    EmptyRecording,
    #[error("channel input is empty")]
    EmptyBuffer,
    #[error("recording line {line}: {msg}")]
    BadRecording { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Iq(#[from] IqError),
    #[error(transparent)]
    Modem(#[from] ModemError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Mpdu(#[from] MpduError),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    BleAdv,
    Mpdu,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::BleAdv => "ble-adv",
            Protocol::Mpdu => "mpdu",
        })
    }
}

impl FromStr for Protocol {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "ble-adv" | "ble" => Ok(Protocol::BleAdv),
            "mpdu" => Ok(Protocol::Mpdu),
            _ => Err(LabError::ConfigInvalid(format!("unknown protocol `{s}`"))),
        }
    }
}

/// What the replay leg transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplayMode {
    /// Re-send the captured IQ, noise included.
    #[default]
    IqReplay,
    /// Re-modulate the captured bits cleanly.
    BitRegenerate,
}

impl fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplayMode::IqReplay => "iq",
            ReplayMode::BitRegenerate => "bits",
        })
    }
}

impl FromStr for ReplayMode {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, LabError> {
        match s {
            "iq" => Ok(ReplayMode::IqReplay),
            "bits" => Ok(ReplayMode::BitRegenerate),
            _ => Err(LabError::ConfigInvalid(format!(
                "unknown replay mode `{s}` (iq or bits)"
            ))),
        }
    }
}

/// Silence around each synthesized packet, in symbols.
pub const GUARD_SYMBOLS: usize = 16;
/// Silence kept around each recorded capture, in symbols.
pub const CAPTURE_MARGIN_SYMBOLS: usize = 8;

/// Advertiser address used for synthesized BLE traffic.
pub const LAB_ADV_ADDRESS: [u8; 6] = [0x41, 0xe0, 0x30, 0x2e, 0x66, 0x69];
/// AdvData for synthesized BLE traffic: an Eddystone-URL frame.
pub const LAB_ADV_DATA: [u8; 19] = [
    0x03, 0x03, 0xaa, 0xfe, 0x0e, 0x16, 0xaa, 0xfe, 0x10, 0xbb, 0x00, 0x74, 0x61, 0x6a, 0x64, 0x69, 0x6e, 0x69, 0x0a,
];

/// Bits the transmitter sends for packet `index`.
pub fn packet_bits(cfg: &ExperimentConfig, index: u64) -> Result<BitStream, LabError> {
    match cfg.protocol {
        Protocol::BleAdv => {
            let mut pdu = AdvPdu::new(PduType::AdvNonconnInd, LAB_ADV_ADDRESS, LAB_ADV_DATA.to_vec());
            pdu.tx_add = true;
            Ok(ble::build_adv_packet(&pdu, AdvChannel::new(cfg.channel)?)?)
        }
        Protocol::Mpdu => {
            let frame = MpduStream::wixel().frame_at(index);
            Ok(mpdu::frame_for_air(&mpdu::build_mpdu(&frame)?))
        }
    }
}

/// Modulate with silent guards on both sides.
fn burst(bits: &BitStream, p: &ModemParams) -> Result<IqBuffer, LabError> {
    let guard = vec![Complex32::new(0.0, 0.0); GUARD_SYMBOLS * p.samples_per_symbol];
    let body = modem::modulate(bits, p)?;
    let mut samples = Vec::with_capacity(body.len() + 2 * guard.len());
    samples.extend_from_slice(&guard);
    samples.extend(body.samples);
    samples.extend_from_slice(&guard);
    Ok(IqBuffer::new(samples, p.sample_rate())?)
}

/// Receiver outcome for one packet buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub crc_ok: bool,
    pub start_sample: usize,
    pub end_sample: usize,
    pub bits: Vec<u8>,
}

/// Decode a single-packet buffer, preferring a CRC-valid frame.
pub fn receive(protocol: Protocol, p: &ModemParams, channel: u8, samples: &[Complex32]) -> Option<Reception> {
    let found: Vec<Reception> = match protocol {
        Protocol::BleAdv => {
            let mut rx = BleSniffer::new(AdvChannel::new(channel).ok()?);
            rx.params = *p;
            rx.decode_segment(samples)
                .into_iter()
                .map(|d| Reception {
                    crc_ok: d.crc_ok(),
                    start_sample: d.span.start_sample,
                    end_sample: d.span.end_sample,
                    bits: d.span.bits,
                })
                .collect()
        }
        Protocol::Mpdu => MpduReceiver::new(*p)
            .decode_segment(samples)
            .into_iter()
            .map(|d| Reception {
                crc_ok: d.span.frame.fcs_ok,
                start_sample: d.span.start_sample,
                end_sample: d.span.end_sample,
                bits: d.span.bits,
            })
            .collect(),
    };
    let first_ok = found.iter().position(|r| r.crc_ok).unwrap_or(0);
    found.into_iter().nth(first_ok)
}

fn tally(outcomes: impl IntoIterator<Item = Option<bool>>) -> LinkStats {
    let mut s = LinkStats::default();
    for o in outcomes {
        s.sent += 1;
        match o {
            Some(true) => s.received_ok += 1,
            Some(false) => s.received_bad += 1,
            None => {}
        }
    }
    s
}

/// A reception and the IQ kept around it.
type Capture = (Reception, Vec<Complex32>);

/// Send `n_packets` frames through stage 1 and record every framed capture.
pub fn run_link(cfg: &ExperimentConfig) -> Result<(LinkStats, Recording), LabError> {
    cfg.validate()?;
    let p = cfg.modem;
    let sps = p.samples_per_symbol;
    let margin = CAPTURE_MARGIN_SYMBOLS * sps;
    let results: Vec<Result<Option<Capture>, LabError>> = (0..cfg.n_packets)
        .into_par_iter()
        .map(|i| {
            let tx = burst(&packet_bits(cfg, i)?, &p)?;
            let rx = apply_channel_stream(&tx, &cfg.stage1, i)?;
            Ok(receive(cfg.protocol, &p, cfg.channel, &rx.samples).map(|r| {
                let lo = r.start_sample.saturating_sub(margin);
                let hi = (r.end_sample + margin).min(rx.samples.len());
                let seg = rx.samples[lo..hi].to_vec();
                (r, seg)
            }))
        })
        .collect();

    let mut rec = Recording::new(cfg.protocol, p, cfg.channel);
    rec.sent = cfg.n_packets;
    let mut outcomes = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let r = r?;
        outcomes.push(r.as_ref().map(|(rx, _)| rx.crc_ok));
        if let Some((rx, seg)) = r {
            let t = i as u64 * cfg.interval_ms * 1000 + (rx.start_sample as f64 / p.sample_rate() * 1e6) as u64;
            rec.push(i as u64, t, rx.crc_ok, rx.bits, &seg);
        }
    }
    Ok((tally(outcomes), rec))
}

/// Re-transmit each capture through `stage2` to a victim receiver.
///
/// Stats count against the recording: `sent` is the number of captures.
pub fn replay_from_recording(
    rec: &Recording,
    victim: &ModemParams,
    stage2: &ChannelModel,
    mode: ReplayMode,
) -> Result<LinkStats, LabError> {
    if rec.is_empty() {
        return Err(LabError::EmptyRecording);
    }
    victim.validate()?;
    stage2.validate()?;
    let outcomes: Vec<Result<Option<bool>, LabError>> = rec
        .packets
        .par_iter()
        .map(|pkt| {
            let tx = match mode {
                ReplayMode::IqReplay => {
                    let b = IqBuffer::new(rec.segment(pkt).to_vec(), rec.sample_rate())?;
                    if b.sample_rate == victim.sample_rate() {
                        b
                    } else {
                        iqio::resample(&b, victim.sample_rate())?
                    }
                }
                ReplayMode::BitRegenerate => burst(&BitStream::new(pkt.bits.clone())?, &rec.modem)?,
            };
            if tx.is_empty() {
                return Ok(None);
            }
            let rx = apply_channel_stream(&tx, stage2, pkt.index)?;
            Ok(receive(rec.protocol, victim, rec.channel, &rx.samples).map(|r| r.crc_ok))
        })
        .collect();
    Ok(tally(outcomes.into_iter().collect::<Result<Vec<_>, _>>()?))
}

/// Result of a full two-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub stage1: LinkStats,
    pub stage2: Option<LinkStats>,
    pub recording: Recording,
    pub report: Report,
}

/// Stage 1, then stage 2 if configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, LabError> {
    let (stage1, recording) = run_link(cfg)?;
    let stage2 = match &cfg.stage2 {
        Some(ch) if !recording.is_empty() => Some(replay_from_recording(&recording, &cfg.modem, ch, cfg.replay_mode)?),
        Some(_) => Some(LinkStats::default()),
        None => None,
    };
    let report = summarize(stage1, stage2).with_config(cfg.to_pairs());
    Ok(Experiment {
        stage1,
        stage2,
        recording,
        report,
    })
}

/// One evaluated point of a calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub snr_db: f64,
    pub value: f64,
}

/// Which evaluated point a calibration sweep returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    /// The point whose metric is closest to the target.
    Closest,
    /// The lowest SNR whose metric reaches the target (at or above it for
    /// an increasing metric, at or below for a decreasing one), falling
    /// back to the closest point.
    Reach,
}

/// Bisect on SNR, steering `metric(snr)` toward `target`.
///
/// `metric` must be nondecreasing in SNR (delivery) or nonincreasing
/// (error rate); `increasing` says which. Ties go to the higher SNR.
pub fn bisect_snr(
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
    target: f64,
    increasing: bool,
    goal: Goal,
    mut metric: impl FnMut(f64) -> Result<f64, LabError>,
) -> Result<CalibrationPoint, LabError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) || iterations == 0 {
        return Err(LabError::ConfigInvalid(
            "calibration needs lo < hi and at least one iteration".into(),
        ));
    }
    let mut points = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let value = metric(mid)?;
        points.push(CalibrationPoint { snr_db: mid, value });
        if (value < target) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let reached = |p: &&CalibrationPoint| {
        if increasing {
            p.value >= target
        } else {
            p.value <= target
        }
    };
    let lowest_reaching = points
        .iter()
        .filter(reached)
        .min_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let closest = points.iter().min_by(|a, b| {
        let (da, db) = ((a.value - target).abs(), (b.value - target).abs());
        da.total_cmp(&db).then(b.snr_db.total_cmp(&a.snr_db))
    });
    let pick = match goal {
        Goal::Reach => lowest_reaching.or(closest),
        Goal::Closest => closest,
    };
    Ok(*pick.expect("at least one iteration"))
}

/// Stage-1 SNR whose packet error rate is closest to `target_per`.
pub fn calibrate_stage1(
    cfg: &ExperimentConfig,
    target_per: f64,
    range: (f64, f64),
    iterations: usize,
) -> Result<CalibrationPoint, LabError> {
    bisect_snr(range.0, range.1, iterations, target_per, false, Goal::Closest, |snr| {
        let mut c = cfg.clone();
        c.stage1.snr_db = Some(snr);
        let (s, _) = run_link(&c)?;
        Ok(s.per().unwrap_or(1.0))
    })
}

/// Lowest stage-2 SNR at which end-to-end delivery (victim successes over
/// packets originally sent) reaches `target_delivery`.
pub fn calibrate_stage2(
    rec: &Recording,
    stage1: &LinkStats,
    stage2: &ChannelModel,
    mode: ReplayMode,
    target_delivery: f64,
    range: (f64, f64),
    iterations: usize,
) -> Result<CalibrationPoint, LabError> {
    if stage1.sent == 0 {
        return Err(LabError::ConfigInvalid("stage 1 sent nothing".into()));
    }
    bisect_snr(
        range.0,
        range.1,
        iterations,
        target_delivery,
        true,
        Goal::Reach,
        |snr| {
            let ch = ChannelModel {
                snr_db: Some(snr),
                ..*stage2
            };
            let s = replay_from_recording(rec, &rec.modem, &ch, mode)?;
            Ok(s.received_ok as f64 / stage1.sent as f64)
        },
    )
}

/// An experiment run after any calibration its config asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedExperiment {
    /// The config with calibrated SNRs filled in.
    pub config: ExperimentConfig,
    pub stage1_point: Option<CalibrationPoint>,
    pub stage2_point: Option<CalibrationPoint>,
    pub experiment: Experiment,
}

/// Calibrate stage 1 and/or stage 2 as configured, then run.
///
/// A delivery target without a configured replay leg adds one seeded
/// `stage1.seed + 1`.
pub fn run_calibrated(cfg: &ExperimentConfig) -> Result<CalibratedExperiment, LabError> {
    cfg.validate()?;
    let mut c = cfg.clone();
    let cal = c.calibration;
    let range = (cal.snr_lo, cal.snr_hi);
    let stage1_point = match cal.stage1_per {
        Some(t) => {
            let pt = calibrate_stage1(&c, t, range, cal.iterations)?;
            c.stage1.snr_db = Some(pt.snr_db);
            Some(pt)
        }
        None => None,
    };
    let stage2_point = match cal.delivery {
        Some(t) => {
            let stage2 = c.stage2.unwrap_or(ChannelModel {
                seed: c.stage1.seed.wrapping_add(1),
                ..ChannelModel::clean()
            });
            let (stats1, rec) = run_link(&c)?;
            if rec.is_empty() {
                return Err(LabError::ConfigInvalid("stage 1 captured nothing to replay".into()));
            }
            let pt = calibrate_stage2(&rec, &stats1, &stage2, c.replay_mode, t, range, cal.iterations)?;
            c.stage2 = Some(ChannelModel {
                snr_db: Some(pt.snr_db),
                ..stage2
            });
            Some(pt)
        }
        None => None,
    };
    let experiment = run_experiment(&c)?;
    Ok(CalibratedExperiment {
        config: c,
        stage1_point,
        stage2_point,
        experiment,
    })
}
