//! `sdrsniff` command implementations.
//!
//! Each command writes its records to `out`, one per line, and returns the
//! process exit status. Lines starting with `#` carry the resolved settings
//! so a run can be repeated exactly.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};
use num_complex::Complex32;
use sdrsniff_core::advdata::{self, EddystoneUrl, IBeacon};
use sdrsniff_core::ble::{AdvChannel, AdvPdu, PduType};
use sdrsniff_core::iqio::{self, IqBuffer, IqFormat};
use sdrsniff_core::lab::{self, ChannelModel, ExperimentConfig, LinkStats, Recording, ReplayMode};
use sdrsniff_core::pipeline::{self, BleSniffer, SYNTH_GUARD_SYMBOLS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_PACKETS: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sdrsniff",
    version,
    about = "Decode, synthesize and replay BLE advertising and 2-FSK MPDU traffic from IQ files"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode BLE advertising packets from an IQ capture.
    Decode(DecodeArgs),
    /// Synthesize a beacon transmission as an IQ file.
    Beacon(BeaconArgs),
    /// Run a capture-and-replay experiment from a key=value config.
    Experiment(ExperimentArgs),
    /// Re-transmit a recording through a noisy channel to a victim receiver.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// cs8 or cf32; defaults to the sidecar, then the extension.
    #[arg(long)]
    pub format: Option<IqFormat>,
    /// Sample rate in Hz; defaults to the sidecar, then 4 Msps.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = 37)]
    pub channel: u8,
    /// Receiver gain, recorded in the header only.
    #[arg(short = 'g', long = "gain", default_value_t = 0, allow_hyphen_values = true)]
    pub gain: i32,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("payload").required(true).args(["url", "ibeacon", "raw"])))]
pub struct BeaconArgs {
    /// Eddystone-URL payload.
    #[arg(long)]
    pub url: Option<String>,
    /// iBeacon payload: proximity UUID, major, minor.
    #[arg(long, num_args = 3, value_names = ["UUID", "MAJOR", "MINOR"])]
    pub ibeacon: Option<Vec<String>>,
    /// Raw AdvData bytes as hex.
    #[arg(long)]
    pub raw: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Defaults to the output extension, then cs8.
    #[arg(long)]
    pub format: Option<IqFormat>,
    #[arg(long, default_value_t = 37)]
    pub channel: u8,
    /// Advertiser address as 12 hex digits, air order.
    #[arg(long, default_value = "41e0302e6669")]
    pub adv_addr: String,
    /// Mark the advertiser address as public (TxAdd = 0).
    #[arg(long)]
    pub public_addr: bool,
    /// Eddystone TX power or iBeacon measured power, dBm.
    #[arg(long, allow_hyphen_values = true)]
    pub tx_power: Option<i8>,
    /// Add noise at this SNR (dB, against the mean power of the file).
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: u32,
    #[arg(long, default_value_t = 100)]
    pub interval_ms: u64,
    #[arg(long, default_value_t = 0.9)]
    pub amplitude: f32,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Print the machine-readable key=value report instead of text.
    #[arg(long)]
    pub kv: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    pub recording: PathBuf,
    /// Replay channel SNR in dB, or `none` for a clean channel.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `iq` re-sends the captured samples, `bits` re-modulates the bits.
    #[arg(long, default_value = "iq")]
    pub mode: ReplayMode,
    #[arg(long)]
    pub kv: bool,
}

/// A command failure, printed as `error: ...` with exit status 1.
#[derive(Debug)]
pub struct CliError(pub String);

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.to_string())
    }
}

type CliResult = Result<i32, CliError>;

/// Run a parsed command; errors are reported on `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Decode(a) => decode(&a, out),
        Command::Beacon(a) => beacon(&a, out),
        Command::Experiment(a) => experiment(&a, out),
        Command::Replay(a) => replay(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.0);
            EXIT_ERROR
        }
    }
}

/// Parse `args` (program name first) and run.
pub fn run_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                EXIT_ERROR
            } else {
                let _ = write!(out, "{}", e.render());
                EXIT_OK
            }
        }
    }
}

pub fn decode(a: &DecodeArgs, out: &mut dyn Write) -> CliResult {
    let channel = AdvChannel::new(a.channel)?;
    let src = iqio::resolve_source(&a.input, a.format, a.rate)?;
    let file = File::open(&a.input).map_err(|e| CliError(format!("{}: {e}", a.input.display())))?;
    writeln!(
        out,
        "# sdrsniff decode in={} format={} rate={} channel={} gain={}",
        a.input.display(),
        src.format,
        src.sample_rate,
        channel.index,
        a.gain
    )?;
    let sniffer = BleSniffer::new(channel);
    let packets = pipeline::sniff_stream(&sniffer, BufReader::new(file), src.format, src.sample_rate)?;
    let mut ok = 0;
    for (n, d) in packets.iter().enumerate() {
        writeln!(out, "{}", d.log_line(n as u64))?;
        if d.crc_ok() {
            ok += 1;
            for line in advdata::describe(&d.span.frame.pdu.adv_data) {
                writeln!(out, "  {line}")?;
            }
        }
    }
    writeln!(out, "# packets={} crc_ok={ok}", packets.len())?;
    Ok(if ok > 0 { EXIT_OK } else { EXIT_NO_PACKETS })
}

fn parse_u16(s: &str) -> Result<u16, CliError> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u16::from_str_radix(h, 16),
        None => s.parse(),
    };
    r.map_err(|_| CliError(format!("`{s}` is not a 16-bit value")))
}

/// AdvData for the requested beacon, plus a description for the header.
fn beacon_payload(a: &BeaconArgs) -> Result<(Vec<u8>, String), CliError> {
    if let Some(url) = &a.url {
        let tx = a.tx_power.unwrap_or(-69);
        let frame = EddystoneUrl::encode(url, tx)?;
        return Ok((frame.to_adv_data(), format!("url={url} tx_power={tx}")));
    }
    if let Some(v) = &a.ibeacon {
        let uuid = advdata::parse_uuid(&v[0]).ok_or_else(|| CliError(format!("bad UUID `{}`", v[0])))?;
        let b = IBeacon {
            proximity_uuid: uuid,
            major: parse_u16(&v[1])?,
            minor: parse_u16(&v[2])?,
            measured_power: a.tx_power.unwrap_or(-59),
        };
        let desc = format!(
            "ibeacon uuid={} major={} minor={} power={}",
            b.uuid_string(),
            b.major,
            b.minor,
            b.measured_power
        );
        return Ok((b.to_adv_data(), desc));
    }
    let raw = a.raw.as_deref().unwrap_or_default();
    let bytes = hex::decode(raw).map_err(|e| CliError(format!("bad --raw hex: {e}")))?;
    Ok((bytes, format!("raw={raw}")))
}

pub fn beacon(a: &BeaconArgs, out: &mut dyn Write) -> CliResult {
    let channel = AdvChannel::new(a.channel)?;
    if a.count == 0 {
        return Err(CliError("--count must be at least 1".into()));
    }
    if !(20..=10_000).contains(&a.interval_ms) {
        return Err(CliError("--interval-ms must be within 20..=10000".into()));
    }
    if !(a.amplitude > 0.0 && a.amplitude <= 1.0) {
        return Err(CliError("--amplitude must be in (0, 1]".into()));
    }
    let format = a
        .format
        .or_else(|| IqFormat::from_path(&a.out))
        .unwrap_or(IqFormat::Int8Interleaved);
    let addr: [u8; 6] = hex::decode(&a.adv_addr)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError(format!("--adv-addr `{}` is not 12 hex digits", a.adv_addr)))?;
    let (adv_data, desc) = beacon_payload(a)?;
    let mut pdu = AdvPdu::new(PduType::AdvNonconnInd, addr, adv_data);
    pdu.tx_add = !a.public_addr;
    pdu.validate()?;

    let one = pipeline::synthesize_adv(&pdu, channel, a.amplitude, SYNTH_GUARD_SYMBOLS)?;
    let step = (a.interval_ms as f64 * 1e-3 * one.sample_rate) as usize;
    let total = (a.count as usize - 1) * step + one.len();
    let mut samples = vec![Complex32::new(0.0, 0.0); total];
    for k in 0..a.count as usize {
        samples[k * step..k * step + one.len()].copy_from_slice(&one.samples);
    }
    let mut buf = IqBuffer::new(samples, one.sample_rate)?.with_center_freq(one.center_freq);
    if let Some(snr) = a.snr {
        buf = lab::apply_channel(&buf, &ChannelModel::awgn(snr, a.seed))?;
    }
    // Keep noisy 8-bit files inside the representable range.
    let peak = buf
        .samples
        .iter()
        .map(|s| s.re.abs().max(s.im.abs()))
        .fold(0.0f32, f32::max);
    if format == IqFormat::Int8Interleaved && peak > 127.0 / 128.0 {
        let g = 127.0 / 128.0 / peak;
        buf.samples.iter_mut().for_each(|s| *s *= g);
    }
    writeln!(
        out,
        "# sdrsniff beacon {desc} channel={} adv_addr={} tx_add={} count={} interval_ms={} amplitude={} snr={} seed={} format={format} rate={}",
        channel.index,
        a.adv_addr,
        u8::from(pdu.tx_add),
        a.count,
        a.interval_ms,
        a.amplitude,
        a.snr.map_or("none".to_string(), |s| s.to_string()),
        a.seed,
        buf.sample_rate
    )?;
    writeln!(out, "adv_data={}", hex::encode(&pdu.adv_data))?;
    iqio::save_iq_file(&a.out, &buf, format)?;
    writeln!(out, "wrote {} samples={}", a.out.display(), buf.len())?;
    Ok(EXIT_OK)
}

pub fn experiment(a: &ExperimentArgs, out: &mut dyn Write) -> CliResult {
    let text = std::fs::read_to_string(&a.config).map_err(|e| CliError(format!("{}: {e}", a.config.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let run = lab::run_calibrated(&cfg)?;
    writeln!(out, "# sdrsniff experiment config={}", a.config.display())?;
    for (k, v) in run.config.to_pairs() {
        writeln!(out, "# {k}={v}")?;
    }
    for (name, pt) in [("stage1", run.stage1_point), ("stage2", run.stage2_point)] {
        if let Some(pt) = pt {
            writeln!(out, "# calibrated {name}.snr_db={} value={}", pt.snr_db, pt.value)?;
        }
    }
    if let Some(path) = &run.config.recording {
        let blob = run.experiment.recording.save(Path::new(path))?;
        writeln!(out, "# wrote recording={path} blob={}", blob.display())?;
    }
    let report = &run.experiment.report;
    out.write_all(if a.kv { report.render_kv() } else { report.render_text() }.as_bytes())?;
    Ok(EXIT_OK)
}

pub fn replay(a: &ReplayArgs, out: &mut dyn Write) -> CliResult {
    let snr = match a.snr.as_str() {
        "none" => None,
        s => Some(s.parse::<f64>().map_err(|_| CliError(format!("bad --snr `{s}`")))?),
    };
    let rec = Recording::load(&a.recording)?;
    let ch = ChannelModel {
        snr_db: snr,
        seed: a.seed,
        ..ChannelModel::clean()
    };
    let stage2 = lab::replay_from_recording(&rec, &rec.modem, &ch, a.mode)?;
    let ok = rec.packets.iter().filter(|p| p.crc_ok).count() as u64;
    let stage1 = LinkStats {
        sent: rec.sent,
        received_ok: ok,
        received_bad: rec.len() as u64 - ok,
    };
    let pairs = vec![
        ("recording".to_string(), a.recording.display().to_string()),
        ("protocol".to_string(), rec.protocol.to_string()),
        ("snr_db".to_string(), a.snr.clone()),
        ("seed".to_string(), a.seed.to_string()),
        ("mode".to_string(), a.mode.to_string()),
    ];
    writeln!(
        out,
        "# sdrsniff replay {}",
        pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    let report = lab::summarize(stage1, Some(stage2)).with_config(pairs);
    out.write_all(if a.kv { report.render_kv() } else { report.render_text() }.as_bytes())?;
    Ok(EXIT_OK)
}

/// Convenience for tests: run and capture stdout and stderr as strings.
pub fn run_captured<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_args(args, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

impl From<CliError> for io::Error {
    fn from(e: CliError) -> Self {
        io::Error::other(e.0)
    }
}
