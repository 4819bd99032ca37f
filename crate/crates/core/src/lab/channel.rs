use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LabError;
use crate::iqio::{self, IqBuffer};

/// Center frequency of common 433 MHz ISM remotes, for labeling only.
pub const REMOTE_433_HZ: f64 = 433.92e6;

/// Seeded impairment channel: timing skew, carrier offset, then AWGN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    /// Signal-to-noise ratio against the buffer's mean power; `None` adds no noise.
    pub snr_db: Option<f64>,
    pub carrier_offset: f64,
    pub timing_skew_ppm: f64,
    pub seed: u64,
    /// Informational; copied onto the output buffer when set.
    pub center_freq: Option<f64>,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self::clean()
    }
}

impl ChannelModel {
    pub const fn clean() -> Self {
        ChannelModel {
            snr_db: None,
            carrier_offset: 0.0,
            timing_skew_ppm: 0.0,
            seed: 0,
            center_freq: None,
        }
    }

    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        ChannelModel {
            snr_db: Some(snr_db),
            seed,
            ..Self::clean()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.snr_db.is_none() && self.carrier_offset == 0.0 && self.timing_skew_ppm == 0.0
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let ok = self.snr_db.is_none_or(f64::is_finite)
            && self.carrier_offset.is_finite()
            && self.timing_skew_ppm.is_finite()
            && self.timing_skew_ppm > -1e6;
        if ok {
            Ok(())
        } else {
            Err(LabError::ConfigInvalid(format!("bad channel parameters {self:?}")))
        }
    }
}

/// Per-sample SNR giving the requested Eb/N0 for binary signalling at
/// `sps` samples per symbol.
pub fn snr_from_ebn0(ebn0_db: f64, sps: usize) -> f64 {
    ebn0_db - 10.0 * (sps as f64).log10()
}

/// Pass `buf` through the channel using noise stream 0.
pub fn apply_channel(buf: &IqBuffer, ch: &ChannelModel) -> Result<IqBuffer, LabError> {
    apply_channel_stream(buf, ch, 0)
}

/// Pass `buf` through the channel. Noise comes from `(ch.seed, stream)` so
/// packets can be processed in any order with identical results.
pub fn apply_channel_stream(buf: &IqBuffer, ch: &ChannelModel, stream: u64) -> Result<IqBuffer, LabError> {
    if buf.is_empty() {
        return Err(LabError::EmptyBuffer);
    }
    ch.validate()?;
    let mut samples = if ch.timing_skew_ppm == 0.0 {
        buf.samples.clone()
    } else {
        skew(&buf.samples, 1.0 + ch.timing_skew_ppm * 1e-6)
    };

    if ch.carrier_offset != 0.0 {
        let w = std::f64::consts::TAU * ch.carrier_offset / buf.sample_rate;
        for (n, s) in samples.iter_mut().enumerate() {
            let (sin, cos) = (w * n as f64).sin_cos();
            *s *= Complex32::new(cos as f32, sin as f32);
        }
    }

    if let Some(snr) = ch.snr_db {
        let p = iqio::mean_power(&samples);
        let sigma = (p * 10f64.powf(-snr / 10.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(ch.seed);
        rng.set_stream(stream);
        for s in samples.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += Complex32::new((sigma * re) as f32, (sigma * im) as f32);
        }
    }

    let mut out = IqBuffer { samples, ..buf.clone() };
    if let Some(f) = ch.center_freq {
        out.center_freq = f;
    }
    Ok(out)
}

/// Linear-interpolation resampling where output sample n reads input time
/// `n * ratio`.
fn skew(x: &[Complex32], ratio: f64) -> Vec<Complex32> {
    let n_out = ((x.len() - 1) as f64 / ratio).floor() as usize + 1;
    (0..n_out)
        .map(|n| {
            let t = n as f64 * ratio;
            let i = t.floor() as usize;
            let f = (t - i as f64) as f32;
            match x.get(i + 1) {
                Some(&next) => x[i] * (1.0 - f) + next * f,
                None => x[i],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> IqBuffer {
        let s = (0..n).map(|k| Complex32::from_polar(1.0, 0.01 * k as f32)).collect();
        IqBuffer::new(s, 1e6).unwrap()
    }

    #[test]
    fn identity() {
        let b = tone(1000);
        let out = apply_channel(&b, &ChannelModel::clean()).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn empty() {
        let b = IqBuffer::new(vec![], 1e6).unwrap();
        assert_eq!(apply_channel(&b, &ChannelModel::clean()), Err(LabError::EmptyBuffer));
    }

    #[test]
    fn seeded_and_stream_dependent() {
        let b = tone(500);
        let ch = ChannelModel::awgn(10.0, 7);
        let a1 = apply_channel_stream(&b, &ch, 3).unwrap();
        let a2 = apply_channel_stream(&b, &ch, 3).unwrap();
        let a3 = apply_channel_stream(&b, &ch, 4).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, a3);
    }

    #[test]
    fn skew_length() {
        let b = tone(10_000);
        for ppm in [-500.0, 100.0, 1000.0] {
            let ch = ChannelModel {
                timing_skew_ppm: ppm,
                ..ChannelModel::clean()
            };
            let out = apply_channel(&b, &ch).unwrap();
            assert!(out.len().abs_diff(b.len()) <= 10, "{ppm}: {}", out.len());
        }
        let ch = ChannelModel {
            timing_skew_ppm: 50.0,
            ..ChannelModel::clean()
        };
        assert!(apply_channel(&b, &ch).unwrap().len().abs_diff(b.len()) <= 1);
    }

    #[test]
    fn carrier_offset_shifts_phase_slope() {
        let b = IqBuffer::new(vec![Complex32::new(1.0, 0.0); 100], 1e6).unwrap();
        let ch = ChannelModel {
            carrier_offset: 10e3,
            ..ChannelModel::clean()
        };
        let out = apply_channel(&b, &ch).unwrap();
        let step = (out.samples[1] * out.samples[0].conj()).arg();
        assert!((step as f64 - std::f64::consts::TAU * 0.01).abs() < 1e-5);
    }

    #[test]
    fn ebn0_conversion() {
        assert!((snr_from_ebn0(20.0, 4) - (20.0 - 6.0206)).abs() < 1e-3);
    }

    #[test]
    fn center_freq_label() {
        let ch = ChannelModel {
            center_freq: Some(REMOTE_433_HZ),
            ..ChannelModel::clean()
        };
        assert_eq!(apply_channel(&tone(4), &ch).unwrap().center_freq, REMOTE_433_HZ);
    }
}
