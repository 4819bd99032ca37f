//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! FAIL lines are reported but only fail the process when
//! `SDRSNIFF_ACCEPTANCE_STRICT` is set, so the rest of `cargo test` still runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdrsniff_cli::run_captured;
use sdrsniff_core::advdata::{self, IBeacon};
use sdrsniff_core::ble::{self, AdvChannel, AdvPdu, PduType};
use sdrsniff_core::iqio::{self, IqBuffer, IqFormat};
use sdrsniff_core::lab::{self, snr_from_ebn0, ChannelModel, ExperimentConfig, Protocol, ReplayMode};
use sdrsniff_core::modem::{self, BitStream, ModemParams};
use sdrsniff_core::mpdu::{self, Mpdu};
use sdrsniff_core::pipeline;

const CAPTURED_DATA: &str = "0303aafe0e16aafe10bb0074616a64696e690a";

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        ok,
        detail: detail.into(),
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn sdrsniff(args: &[&str]) -> (i32, String, String) {
    run_captured(std::iter::once("sdrsniff").chain(args.iter().copied()))
}

fn within(t: Duration, limit_s: f64) -> bool {
    t.as_secs_f64() < limit_s
}

fn golden_decode() -> Outcome {
    let input = fixture("captured_adv_ch37.cs8");
    let (code, out, err) = sdrsniff(&["decode", "--in", input.to_str().unwrap(), "-g", "0"]);
    if code != 0 {
        return outcome(false, format!("exit {code}: {err}"));
    }
    let Some(line) = out.lines().find(|l| l.contains(" Pkt")) else {
        return outcome(false, "no packet line");
    };
    let fields: Vec<&str> = line.split_whitespace().skip(2).collect();
    let want = [
        "Ch37",
        "AA:8e89bed6",
        "ADV_PDU_t2:ADV_NONCONN_IND",
        "T1",
        "R0",
        "PloadL25",
        "AdvA:41e0302e6669",
        &format!("Data:{CAPTURED_DATA}"),
        "CRC0",
    ];
    let ok = fields == want && line.split_whitespace().next().is_some_and(|t| t.ends_with("us"));
    outcome(ok, line.to_string())
}

fn beacon_arithmetic() -> Outcome {
    let b = IBeacon {
        proximity_uuid: [0xB9; 16],
        major: 0,
        minor: 0,
        measured_power: -59,
    };
    let mut bytes = b.to_adv_data();
    let n = bytes.len();
    // Major and minor sit just before the power byte, big-endian.
    bytes[n - 5..n - 1].copy_from_slice(&[0x00, 0x49, 0x00, 0x0A]);
    let parsed = advdata::parse_ad_structures(&bytes)
        .ok()
        .and_then(|s| advdata::parse_ibeacon(&s).ok().flatten());
    let (major, minor) = parsed.map_or((0, 0), |p| (p.major, p.minor));

    let data = hex::decode(CAPTURED_DATA).unwrap();
    let url = advdata::parse_ad_structures(&data)
        .ok()
        .and_then(|s| advdata::parse_eddystone_url(&s).ok().flatten())
        .and_then(|e| e.url().ok())
        .unwrap_or_default();
    let want_url = "http://www.tajdini.com/";
    outcome(
        major == 73 && minor == 10 && url == want_url,
        format!("major={major} minor={minor} url={url} (expected {want_url})"),
    )
}

fn codec_round_trips() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    for _ in 0..500 {
        let n = rng.random_range(0..=31);
        let mut pdu = AdvPdu::new(
            PduType::from_code([0u8, 2, 6][rng.random_range(0..3)]),
            rng.random(),
            (0..n).map(|_| rng.random()).collect(),
        );
        pdu.tx_add = rng.random();
        pdu.rx_add = rng.random();
        let ch = rng.random_range(37..=39);
        let bits = ble::build_adv_packet(&pdu, AdvChannel::new(ch).unwrap()).unwrap();
        match ble::decode_after_access_address(&bits.bits()[40..], ch) {
            Ok((p, _)) if p.crc_ok && p.pdu == pdu => {}
            _ => failures += 1,
        }
    }
    for _ in 0..500 {
        let n = rng.random_range(0..=mpdu::MAX_PAYLOAD);
        let m = Mpdu {
            frame_control: rng.random(),
            seq: rng.random(),
            dest_pan: rng.random(),
            dest_addr: rng.random(),
            src_addr: rng.random(),
            payload: (0..n).map(|_| rng.random()).collect(),
            fcs_ok: true,
        };
        let bytes = mpdu::build_mpdu(&m).unwrap();
        let air = mpdu::frame_for_air(&bytes);
        let back = mpdu::decode_after_sync(&air.bits()[64..])
            .ok()
            .and_then(|(raw, _)| mpdu::parse_mpdu(&raw).ok());
        if back.as_ref() != Some(&m) {
            failures += 1;
        }
    }
    let dt = t.elapsed();
    outcome(
        failures == 0 && within(dt, 10.0),
        format!("failures={failures}/1000 in {dt:.2?}"),
    )
}

fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn count_errors(p: &ModemParams, bits: &[u8], rx: &IqBuffer) -> usize {
    let f = modem::filtered_discriminator(&rx.samples, p);
    let got = modem::recover_bits(&f, p, None).unwrap();
    got.bits().iter().zip(bits).filter(|(a, b)| a != b).count() + got.len().abs_diff(bits.len())
}

fn modem_loopback() -> Outcome {
    let t = Instant::now();
    let bits = random_bits(100_000, 1);
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, p) in [("ble", ModemParams::ble()), ("wixel", ModemParams::wixel())] {
        let iq = modem::modulate(&BitStream::new(bits.clone()).unwrap(), &p).unwrap();
        let clean = count_errors(&p, &bits, &iq);
        let ch = ChannelModel::awgn(snr_from_ebn0(20.0, p.samples_per_symbol), 3);
        let noisy = count_errors(&p, &bits, &lab::apply_channel(&iq, &ch).unwrap());
        let ber = noisy as f64 / bits.len() as f64;
        // Upper 3-sigma bound, floored at one error event.
        let n = bits.len() as f64;
        let upper = ber + 3.0 * (ber.max(1.0 / n) * (1.0 - ber) / n).sqrt();
        ok &= clean == 0 && upper < 1e-4;
        detail.push(format!(
            "{name}: noiseless_errors={clean} ber@20dB={ber:.2e} upper3s={upper:.2e}"
        ));
    }
    for proto in [Protocol::Mpdu, Protocol::BleAdv] {
        let curve: Vec<f64> = [5.0, 10.0, 15.0, 20.0, 25.0]
            .iter()
            .map(|&snr| {
                let mut c = ExperimentConfig::new(proto, 1000);
                c.stage1 = ChannelModel::awgn(snr, 8);
                lab::run_link(&c).unwrap().0.per().unwrap()
            })
            .collect();
        ok &= curve.windows(2).all(|w| w[1] <= w[0]);
        detail.push(format!("{proto} per {curve:?}"));
    }
    let dt = t.elapsed();
    ok &= within(dt, 60.0);
    detail.push(format!("{dt:.2?}"));
    outcome(ok, detail.join("; "))
}

/// Calibrate to 7% stage-1 loss and 50% delivery, then check the bookkeeping.
fn calibrated_run(mode: ReplayMode, n: u64) -> Result<lab::CalibratedExperiment, lab::LabError> {
    let mut c = ExperimentConfig::new(Protocol::Mpdu, n);
    c.stage1.seed = 31;
    c.stage2 = Some(ChannelModel {
        seed: 32,
        ..ChannelModel::clean()
    });
    c.replay_mode = mode;
    c.calibration.stage1_per = Some(0.07);
    c.calibration.delivery = Some(0.5);
    lab::run_calibrated(&c)
}

fn replay_bookkeeping() -> Outcome {
    let t = Instant::now();
    let n = 1000u64;
    let per_tol = 3.0 * (0.07 * 0.93 / n as f64).sqrt();
    let mut ok = true;
    let mut detail = Vec::new();
    let mut bits_run = None;
    for mode in [ReplayMode::IqReplay, ReplayMode::BitRegenerate] {
        let run = match calibrated_run(mode, n) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        let r = &run.experiment.report;
        let per1 = run.experiment.stage1.per().unwrap();
        let delivery = r.end_to_end_delivery().value().unwrap();
        let (l1, la, le) = (r.stage1_loss().num, r.additional_loss().num, r.end_to_end_loss().num);
        ok &= (per1 - 0.07).abs() <= per_tol && delivery >= 0.5 && l1 + la == le;
        detail.push(format!(
            "{mode}: snr1={:.3} per1={per1:.4} (0.07±{per_tol:.4}) snr2={:.3} delivery={delivery:.4} \
             stage1_loss={l1} + additional_loss={la} = end_to_end_loss={le}",
            run.config.stage1.snr_db.unwrap(),
            run.config.stage2.unwrap().snr_db.unwrap(),
        ));
        if mode == ReplayMode::BitRegenerate {
            bits_run = Some(run);
        }
    }

    // Bit-regenerating replay makes the two stages independent, so delivery
    // should match the product of single-stage success rates estimated apart.
    let run = bits_run.unwrap();
    let delivery = run.experiment.report.end_to_end_delivery().value().unwrap();
    let snr1 = run.config.stage1.snr_db.unwrap();
    let snr2 = run.config.stage2.unwrap().snr_db.unwrap();
    let n_ind = 4000u64;
    let single = |snr: f64, seed: u64| {
        let mut c = ExperimentConfig::new(Protocol::Mpdu, n_ind);
        c.stage1 = ChannelModel::awgn(snr, seed);
        let (s, _) = lab::run_link(&c).unwrap();
        s.received_ok as f64 / s.sent as f64
    };
    let (p1, p2) = (single(snr1, 901), single(snr2, 902));
    let product = p1 * p2;
    let sigma = (product * (1.0 - product) / n as f64
        + p2 * p2 * p1 * (1.0 - p1) / n_ind as f64
        + p1 * p1 * p2 * (1.0 - p2) / n_ind as f64)
        .sqrt();
    ok &= (delivery - product).abs() <= 3.0 * sigma;
    detail.push(format!("analytic product={product:.4}±3×{sigma:.4} vs {delivery:.4}"));
    let dt = t.elapsed();
    ok &= within(dt, 60.0);
    detail.push(format!("{dt:.2?}"));
    outcome(ok, detail.join("; "))
}

fn flip(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 1 << (bit % 8);
}

fn error_detection() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut missed, mut tried) = (0usize, 0usize);
    for _ in 0..50 {
        let n = rng.random_range(0..=31);
        let pdu = AdvPdu::new(
            PduType::AdvNonconnInd,
            rng.random(),
            (0..n).map(|_| rng.random()).collect(),
        );
        let ch = rng.random_range(37..=39);
        let bits = ble::build_adv_packet(&pdu, AdvChannel::new(ch).unwrap())
            .unwrap()
            .into_bits();
        for i in 40..bits.len() {
            let mut b = bits.clone();
            b[i] ^= 1;
            tried += 1;
            if ble::decode_after_access_address(&b[40..], ch).is_ok_and(|(p, _)| p.crc_ok) {
                missed += 1;
            }
        }
    }
    for _ in 0..50 {
        let n = rng.random_range(0..=mpdu::MAX_PAYLOAD);
        let m = Mpdu::data(
            rng.random(),
            rng.random(),
            rng.random(),
            rng.random(),
            (0..n).map(|_| rng.random()).collect(),
        );
        let frame = mpdu::build_mpdu(&m).unwrap();
        for i in 0..frame.len() * 8 {
            let mut f = frame.clone();
            flip(&mut f, i);
            tried += 1;
            if mpdu::parse_mpdu(&f).is_ok_and(|p| p.fcs_ok) {
                missed += 1;
            }
        }
    }
    let dt = t.elapsed();
    outcome(
        missed == 0 && within(dt, 10.0),
        format!("undetected={missed}/{tried} in {dt:.2?}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut detail = Vec::new();
    let mut ok = true;
    for (proto, snr1, snr2) in [(Protocol::Mpdu, 1.5, 2.0), (Protocol::BleAdv, 8.0, 9.0)] {
        let mut c = ExperimentConfig::new(proto, 300);
        c.stage1 = ChannelModel::awgn(snr1, 41);
        c.stage2 = Some(ChannelModel::awgn(snr2, 42));
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let e = lab::run_experiment(&c).unwrap();
                let path = dir.path().join(format!("{proto}-{tag}"));
                e.recording.save(&path).unwrap();
                let idx = std::fs::read_to_string(&path).unwrap();
                let blob = std::fs::read(lab::blob_path(&path)).unwrap();
                (
                    e.report.render_kv(),
                    e.report.render_text(),
                    idx.replace(&format!("-{tag}.cf32"), ""),
                    blob,
                )
            })
            .collect();
        let same = runs[0] == runs[1];
        ok &= same;
        detail.push(format!("{proto}: identical={same} blob_bytes={}", runs[0].3.len()));
    }
    outcome(ok, detail.join("; "))
}

fn throughput() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ten_seconds.cs8");
    let fs = 4e6;
    let total = 10 * fs as usize;
    let mut pdu = AdvPdu::new(PduType::AdvNonconnInd, lab::LAB_ADV_ADDRESS, lab::LAB_ADV_DATA.to_vec());
    pdu.tx_add = true;
    let one = pipeline::synthesize_adv(&pdu, AdvChannel::new(37).unwrap(), 0.5, 0).unwrap();
    // One advertisement every 20 ms, the densest legal interval.
    let step = (0.02 * fs) as usize;
    let mut samples = vec![Complex32::new(0.0, 0.0); total];
    let mut sent = 0;
    for start in (step / 2..total - one.len()).step_by(step) {
        samples[start..start + one.len()].copy_from_slice(&one.samples);
        sent += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in samples.iter_mut() {
        *s += Complex32::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
    }
    let buf = IqBuffer::new(samples, fs).unwrap();
    iqio::save_iq_file(&path, &buf, IqFormat::Int8Interleaved).unwrap();
    drop(buf);

    let t = Instant::now();
    let (code, out, err) = sdrsniff(&["decode", "--in", path.to_str().unwrap()]);
    let dt = t.elapsed();
    let summary = out.lines().last().unwrap_or_default().to_string();
    let want = format!("# packets={sent} crc_ok={sent}");
    outcome(
        code == 0 && summary == want && dt.as_secs_f64() <= 10.0,
        format!("{summary} (sent {sent}) in {dt:.2?} {err}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("golden decode", golden_decode),
        ("beacon arithmetic", beacon_arithmetic),
        ("codec round-trips", codec_round_trips),
        ("modem loopback", modem_loopback),
        ("replay bookkeeping", replay_bookkeeping),
        ("error-detection exhaustiveness", error_detection),
        ("determinism", determinism),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.ok);
        println!("{} {}. {name}: {}", if o.ok { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 || std::env::var_os("SDRSNIFF_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
