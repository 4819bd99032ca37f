//! Rational-ratio polyphase resampling.

use num_complex::Complex32;

use super::{check_rate, mean_power, IqBuffer, IqError};

const MAX_TERM: u32 = 64;
/// Filter half-length in zero crossings of the anti-alias sinc.
const ZERO_CROSSINGS: usize = 16;
/// Kaiser window shape; about 55 dB stopband and < 0.05 dB passband ripple.
const KAISER_BETA: f64 = 5.0;
/// Out-of-band energy fraction above which [`resample_strict`] refuses.
const ALIAS_LIMIT: f64 = 0.01;

/// Express `to / from` as `up / down` with both terms at most 64.
pub fn rational_ratio(from: f64, to: f64) -> Option<(u32, u32)> {
    let ratio = to / from;
    for down in 1..=MAX_TERM {
        let up = (ratio * down as f64).round();
        if up < 1.0 || up > MAX_TERM as f64 {
            continue;
        }
        if ((up / down as f64) - ratio).abs() <= 1e-9 * ratio {
            let up = up as u32;
            let g = gcd(up, down);
            return Some((up / g, down / g));
        }
    }
    None
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function, power series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..50 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-12 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass, `2*half+1` taps, cutoff `fc` in cycles
/// per sample, unit DC gain before `gain` is applied.
pub(crate) fn kaiser_lowpass(fc: f64, half: usize, beta: f64, gain: f64) -> Vec<f32> {
    let norm = bessel_i0(beta);
    (0..=2 * half)
        .map(|i| {
            let k = i as f64 - half as f64;
            let x = 2.0 * fc * k;
            let sinc = if k == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let r = k / half.max(1) as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            (gain * 2.0 * fc * sinc * w) as f32
        })
        .collect()
}

/// Prototype low-pass at the upsampled rate, gain `up`, length `2*half+1`.
fn design_taps(up: u32, down: u32) -> (Vec<f32>, usize) {
    let widest = up.max(down) as usize;
    let half = ZERO_CROSSINGS * widest;
    // Cutoff in cycles per upsampled sample, pulled in slightly so the
    // transition band ends near the lower Nyquist frequency.
    let fc = 0.5 / widest as f64 * 0.95;
    (kaiser_lowpass(fc, half, KAISER_BETA, up as f64), half)
}

/// Change the sample rate of `buf` to `new_rate`.
///
/// An identity ratio returns an exact copy. Energy above the new Nyquist
/// frequency is filtered out silently; see [`resample_strict`].
pub fn resample(buf: &IqBuffer, new_rate: f64) -> Result<IqBuffer, IqError> {
    check_rate(new_rate)?;
    let (up, down) = rational_ratio(buf.sample_rate, new_rate).ok_or(IqError::IrrationalRatio {
        from: buf.sample_rate,
        to: new_rate,
    })?;
    let samples = if up == down {
        buf.samples.clone()
    } else {
        polyphase(&buf.samples, up, down)
    };
    Ok(IqBuffer {
        samples,
        sample_rate: new_rate,
        center_freq: buf.center_freq,
        origin: buf.origin.clone(),
    })
}

/// Like [`resample`], but fails with `AliasingRisk` when more than 1% of the
/// input energy falls outside the band the new rate can represent.
pub fn resample_strict(buf: &IqBuffer, new_rate: f64) -> Result<IqBuffer, IqError> {
    let out = resample(buf, new_rate)?;
    if new_rate < buf.sample_rate {
        let fraction = band_loss(buf, &out);
        if fraction > ALIAS_LIMIT {
            return Err(IqError::AliasingRisk { fraction });
        }
    }
    Ok(out)
}

/// Fraction of the energy of `buf` lying above `new_rate / 2`.
pub fn out_of_band_fraction(buf: &IqBuffer, new_rate: f64) -> Result<f64, IqError> {
    if new_rate >= buf.sample_rate {
        return Ok(0.0);
    }
    let out = resample(buf, new_rate)?;
    Ok(band_loss(buf, &out))
}

fn band_loss(input: &IqBuffer, output: &IqBuffer) -> f64 {
    let p_in = mean_power(&input.samples);
    if p_in == 0.0 {
        return 0.0;
    }
    (1.0 - mean_power(&output.samples) / p_in).clamp(0.0, 1.0)
}

fn polyphase(x: &[Complex32], up: u32, down: u32) -> Vec<Complex32> {
    if x.is_empty() {
        return Vec::new();
    }
    let (taps, half) = design_taps(up, down);
    let (l, m) = (up as i64, down as i64);
    let n_out = (x.len() as i64 * l + m - 1) / m;
    let last = x.len() as i64 - 1;
    (0..n_out)
        .map(|n| {
            let t = n * m;
            // j such that |t - j*l| <= half
            let j_lo = ((t - half as i64) + l - 1).div_euclid(l).max(0);
            let j_hi = (t + half as i64).div_euclid(l).min(last);
            let mut acc = Complex32::new(0.0, 0.0);
            for j in j_lo..=j_hi {
                let k = (t - j * l + half as i64) as usize;
                acc += x[j as usize] * taps[k];
            }
            acc
        })
        .collect()
}
