//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc filter.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::waveform::Waveform;

const KAISER_BETA: f64 = 5.0;
const HALF_LEN_PER_RATE: usize = 10;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Low-pass prototype with cutoff `cutoff` (fraction of Nyquist), unit DC gain.
fn kaiser_lowpass(taps: usize, cutoff: f64) -> Vec<f64> {
    let m = (taps - 1) as f64;
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc(cutoff * (n as f64 - m / 2.0)) * win
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Resamples by `up/down` (reduced). Output length is `ceil(n * up / down)`.
pub fn resample_ratio(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    let g = gcd(up as u64, down as u64) as usize;
    let (up, down) = (up / g, down / g);
    if up == down {
        return x.to_vec();
    }
    let max_rate = up.max(down);
    let half = HALF_LEN_PER_RATE * max_rate;
    let taps = 2 * half + 1;
    let h: Vec<f64> = kaiser_lowpass(taps, 1.0 / max_rate as f64)
        .into_iter()
        .map(|v| v * up as f64)
        .collect();
    let n_in = x.len();
    let n_out = (n_in * up).div_ceil(down);
    (0..n_out)
        .map(|m| {
            // position in the zero-stuffed signal, compensating the filter delay
            let k0 = m * down + half;
            let mut acc = 0.0;
            let mut j = k0 % up;
            while j < taps && j <= k0 {
                let idx = (k0 - j) / up;
                if idx < n_in {
                    acc += h[j] * x[idx];
                }
                j += up;
            }
            acc
        })
        .collect()
}

/// Resamples a waveform to `target_fs`, anti-aliasing when downsampling.
pub fn resample(w: &Waveform, target_fs: u32) -> Result<Waveform> {
    if target_fs == 0 {
        return Err(Error::Parameter("target sampling rate must be positive".into()));
    }
    if target_fs == w.fs() {
        return Ok(w.clone());
    }
    let y = resample_ratio(w.samples(), target_fs as usize, w.fs() as usize);
    Waveform::new(y, target_fs, w.label.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_wave(freq: f64, fs: u32, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / fs as f64).sin())
                .collect(),
            fs,
            "sine",
        )
        .unwrap()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn halving_length() {
        let y = resample(&sine_wave(10.0, 2000, 2000), 1000).unwrap();
        assert_eq!(y.fs(), 1000);
        assert_eq!(y.len(), 1000);
    }

    #[test]
    fn downsampled_sine_matches_reference() {
        let y = resample(&sine_wave(10.0, 2000, 2000), 1000).unwrap();
        let reference = sine_wave(10.0, 1000, 1000);
        assert!(correlation(y.samples(), reference.samples()) > 0.999);
    }

    #[test]
    fn identity_when_rate_unchanged() {
        let w = sine_wave(3.0, 500, 777);
        assert_eq!(resample(&w, 500).unwrap(), w);
    }

    #[test]
    fn upsampling_ecg_rate() {
        let w = sine_wave(5.0, 128, 1280);
        let y = resample(&w, 1000).unwrap();
        assert_eq!(y.len(), 10000);
        assert!((y.duration_s() - w.duration_s()).abs() <= 1.0 / 1000.0);
        let reference = sine_wave(5.0, 1000, 10000);
        // ignore the zero-padded edges
        let c = correlation(&y.samples()[500..9500], &reference.samples()[500..9500]);
        assert!(c > 0.9999, "corr {c}");
    }

    #[test]
    fn downsampling_removes_aliases() {
        // 900 Hz at 2 kHz would alias to 100 Hz at 1 kHz
        let y = resample(&sine_wave(900.0, 2000, 4000), 1000).unwrap();
        let p: f64 = y.samples()[200..1800].iter().map(|v| v * v).sum::<f64>() / 1600.0;
        assert!(p < 1e-4, "alias power {p}");
    }

    #[test]
    fn odd_ratio_duration() {
        let w = sine_wave(1.0, 1000, 1001);
        let y = resample(&w, 128).unwrap();
        assert!((y.duration_s() - w.duration_s()).abs() <= 1.0 / 128.0);
    }
}
