//! `key=value` experiment configuration.
//!
//! ```text
//! # two-stage MPDU run
//! protocol=mpdu
//! n_packets=1000
//! interval_ms=1000
//! stage1.snr_db=9.5
//! stage1.seed=1
//! stage2.snr_db=7
//! stage2.seed=2
//! ```
//!
//! `modem=ble|wixel` picks a preset (default follows the protocol); the
//! individual modem keys override it. Channel keys default to a clean
//! channel; any `stage2.*` key enables the replay leg.

use std::collections::BTreeMap;

use super::{ChannelModel, LabError, Protocol, ReplayMode};
use crate::modem::ModemParams;

/// Legal BLE advertising interval range.
pub const BLE_INTERVAL_MS: std::ops::RangeInclusive<u64> = 20..=10_000;

/// Optional SNR calibration requested by a config file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    /// Stage-1 packet error rate to aim for.
    pub stage1_per: Option<f64>,
    /// End-to-end delivered fraction to aim for.
    pub delivery: Option<f64>,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub iterations: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            stage1_per: None,
            delivery: None,
            snr_lo: -5.0,
            snr_hi: 30.0,
            iterations: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub n_packets: u64,
    /// Logical spacing between packets; only affects timestamps.
    pub interval_ms: u64,
    pub modem: ModemParams,
    /// BLE advertising channel.
    pub channel: u8,
    pub stage1: ChannelModel,
    pub stage2: Option<ChannelModel>,
    pub replay_mode: ReplayMode,
    pub calibration: CalibrationTargets,
    /// Where to write the stage-1 recording, if anywhere.
    pub recording: Option<String>,
}

impl ExperimentConfig {
    /// Clean single-stage run with the protocol's default modem, one packet
    /// per second.
    pub fn new(protocol: Protocol, n_packets: u64) -> Self {
        ExperimentConfig {
            protocol,
            n_packets,
            interval_ms: 1000,
            modem: default_modem(protocol),
            channel: 37,
            stage1: ChannelModel::clean(),
            stage2: None,
            replay_mode: ReplayMode::default(),
            calibration: CalibrationTargets::default(),
            recording: None,
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let invalid = |m: String| Err(LabError::ConfigInvalid(m));
        if self.n_packets == 0 {
            return invalid("n_packets must be at least 1".into());
        }
        if self.protocol == Protocol::BleAdv && !BLE_INTERVAL_MS.contains(&self.interval_ms) {
            return invalid(format!("BLE interval {} ms outside 20..=10000", self.interval_ms));
        }
        if self.protocol == Protocol::BleAdv && !(37..=39).contains(&self.channel) {
            return invalid(format!("channel {} is not an advertising channel", self.channel));
        }
        self.modem
            .validate()
            .map_err(|e| LabError::ConfigInvalid(e.to_string()))?;
        self.stage1.validate()?;
        if let Some(s) = &self.stage2 {
            s.validate()?;
        }
        let c = &self.calibration;
        if c.snr_lo.partial_cmp(&c.snr_hi) != Some(std::cmp::Ordering::Less) || c.iterations == 0 {
            return invalid("calibration needs snr_lo < snr_hi and iterations >= 1".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::ConfigInvalid(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if kv.insert(k, v).is_some() {
                return Err(LabError::ConfigInvalid(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        let mut take = |k: &str| kv.remove(k);

        let protocol: Protocol = take("protocol")
            .ok_or_else(|| LabError::ConfigInvalid("missing `protocol`".into()))?
            .parse()?;
        let n_packets = num(take("n_packets").unwrap_or("1000"), "n_packets")?;
        let mut c = ExperimentConfig::new(protocol, n_packets);
        if let Some(v) = take("interval_ms") {
            c.interval_ms = num(v, "interval_ms")?;
        }
        if let Some(v) = take("channel") {
            c.channel = num(v, "channel")?;
        }
        if let Some(v) = take("replay_mode") {
            c.replay_mode = v.parse()?;
        }
        if let Some(v) = take("modem") {
            c.modem = match v {
                "ble" => ModemParams::ble(),
                "wixel" => ModemParams::wixel(),
                _ => return Err(LabError::ConfigInvalid(format!("unknown modem preset `{v}`"))),
            };
        }
        if let Some(v) = take("symbol_rate") {
            c.modem.symbol_rate = num(v, "symbol_rate")?;
        }
        if let Some(v) = take("modulation_index") {
            c.modem.modulation_index = num(v, "modulation_index")?;
        }
        if let Some(v) = take("samples_per_symbol") {
            c.modem.samples_per_symbol = num(v, "samples_per_symbol")?;
        }
        if let Some(v) = take("gaussian_bt") {
            c.modem.gaussian_bt = opt_num(v, "gaussian_bt")?;
        }
        c.stage1 = channel(&mut take, "stage1")?.unwrap_or_default();
        c.stage2 = channel(&mut take, "stage2")?;
        let cal = &mut c.calibration;
        if let Some(v) = take("calibrate.stage1_per") {
            cal.stage1_per = Some(num(v, "calibrate.stage1_per")?);
        }
        if let Some(v) = take("calibrate.delivery") {
            cal.delivery = Some(num(v, "calibrate.delivery")?);
        }
        if let Some(v) = take("calibrate.snr_lo") {
            cal.snr_lo = num(v, "calibrate.snr_lo")?;
        }
        if let Some(v) = take("calibrate.snr_hi") {
            cal.snr_hi = num(v, "calibrate.snr_hi")?;
        }
        if let Some(v) = take("calibrate.iterations") {
            cal.iterations = num(v, "calibrate.iterations")?;
        }
        c.recording = take("recording").map(str::to_string);

        if let Some(k) = kv.keys().next() {
            return Err(LabError::ConfigInvalid(format!("unknown key `{k}`")));
        }
        c.validate()?;
        Ok(c)
    }

    /// Every resolved setting, in a stable order that [`parse`](Self::parse) accepts.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, val: String| v.push((k.to_string(), val));
        put("protocol", self.protocol.to_string());
        put("n_packets", self.n_packets.to_string());
        put("interval_ms", self.interval_ms.to_string());
        put("channel", self.channel.to_string());
        put("replay_mode", self.replay_mode.to_string());
        put("symbol_rate", self.modem.symbol_rate.to_string());
        put("modulation_index", self.modem.modulation_index.to_string());
        put("samples_per_symbol", self.modem.samples_per_symbol.to_string());
        put("gaussian_bt", fmt_opt(self.modem.gaussian_bt));
        for (name, ch) in [("stage1", Some(&self.stage1)), ("stage2", self.stage2.as_ref())] {
            let Some(ch) = ch else { continue };
            put(&format!("{name}.snr_db"), fmt_opt(ch.snr_db));
            put(&format!("{name}.carrier_offset"), ch.carrier_offset.to_string());
            put(&format!("{name}.timing_skew_ppm"), ch.timing_skew_ppm.to_string());
            put(&format!("{name}.seed"), ch.seed.to_string());
            put(&format!("{name}.center_freq"), fmt_opt(ch.center_freq));
        }
        let cal = &self.calibration;
        if let Some(t) = cal.stage1_per {
            put("calibrate.stage1_per", t.to_string());
        }
        if let Some(t) = cal.delivery {
            put("calibrate.delivery", t.to_string());
        }
        if cal.stage1_per.is_some() || cal.delivery.is_some() {
            put("calibrate.snr_lo", cal.snr_lo.to_string());
            put("calibrate.snr_hi", cal.snr_hi.to_string());
            put("calibrate.iterations", cal.iterations.to_string());
        }
        if let Some(r) = &self.recording {
            put("recording", r.clone());
        }
        v
    }

    pub fn to_kv(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn default_modem(p: Protocol) -> ModemParams {
    match p {
        Protocol::BleAdv => ModemParams::ble(),
        Protocol::Mpdu => ModemParams::wixel(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".to_string(), |x| x.to_string())
}

fn num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, LabError> {
    v.parse()
        .map_err(|_| LabError::ConfigInvalid(format!("bad value `{v}` for `{key}`")))
}

fn opt_num(v: &str, key: &str) -> Result<Option<f64>, LabError> {
    if v == "none" {
        Ok(None)
    } else {
        num(v, key).map(Some)
    }
}

fn channel<'a>(take: &mut impl FnMut(&str) -> Option<&'a str>, prefix: &str) -> Result<Option<ChannelModel>, LabError> {
    let mut ch = ChannelModel::clean();
    let mut any = false;
    let key = |k: &str| format!("{prefix}.{k}");
    if let Some(v) = take(&key("snr_db")) {
        ch.snr_db = opt_num(v, &key("snr_db"))?;
        any = true;
    }
    if let Some(v) = take(&key("carrier_offset")) {
        ch.carrier_offset = num(v, &key("carrier_offset"))?;
        any = true;
    }
    if let Some(v) = take(&key("timing_skew_ppm")) {
        ch.timing_skew_ppm = num(v, &key("timing_skew_ppm"))?;
        any = true;
    }
    if let Some(v) = take(&key("seed")) {
        ch.seed = num(v, &key("seed"))?;
        any = true;
    }
    if let Some(v) = take(&key("center_freq")) {
        ch.center_freq = opt_num(v, &key("center_freq"))?;
        any = true;
    }
    Ok(any.then_some(ch))
}
