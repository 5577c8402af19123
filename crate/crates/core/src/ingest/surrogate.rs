//! Synthetic stand-ins for sEMG and ECG recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::preprocess::{butterworth, FilterKind};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    Semg,
    Ecg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub duration_s: f64,
    pub fs: u32,
    pub seed: u64,
    pub semg_band: (f64, f64),
    pub ecg_rate_bpm: f64,
    pub ecg_template_width_s: f64,
}

impl SurrogateSpec {
    pub fn semg(duration_s: f64, fs: u32, seed: u64) -> Self {
        Self {
            kind: SurrogateKind::Semg,
            duration_s,
            fs,
            seed,
            semg_band: (20.0, (0.45 * fs as f64).min(450.0)),
            ecg_rate_bpm: 70.0,
            ecg_template_width_s: 0.08,
        }
    }

    pub fn ecg(duration_s: f64, fs: u32, seed: u64, rate_bpm: f64) -> Self {
        Self {
            kind: SurrogateKind::Ecg,
            ecg_rate_bpm: rate_bpm,
            ..Self::semg(duration_s, fs, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let nyq = self.fs as f64 / 2.0;
        let (lo, hi) = self.semg_band;
        if !(self.duration_s > 0.0) || self.fs == 0 {
            return Err(Error::Parameter("duration and fs must be positive".into()));
        }
        if !(lo > 0.0 && lo < hi && hi < nyq) {
            return Err(Error::Parameter(format!(
                "sEMG band ({lo}, {hi}) must satisfy 0 < low < high < {nyq}"
            )));
        }
        if !(30.0..=180.0).contains(&self.ecg_rate_bpm) {
            return Err(Error::Parameter(format!(
                "heart rate {} bpm outside [30, 180]",
                self.ecg_rate_bpm
            )));
        }
        if !(self.ecg_template_width_s > 0.0) {
            return Err(Error::Parameter("template width must be positive".into()));
        }
        Ok(())
    }
}

/// Two opposed half-sine lobes spanning `width` samples.
pub fn biphasic_template(width: usize) -> Vec<f64> {
    let half = width as f64 / 2.0;
    (0..width)
        .map(|i| {
            let t = i as f64 + 0.5;
            if t < half {
                (PI * t / half).sin()
            } else {
                -(PI * (t - half) / half).sin()
            }
        })
        .collect()
}

/// Generates a surrogate signal; a pure function of `spec`.
pub fn gen_surrogate(spec: &SurrogateSpec) -> Result<Waveform> {
    spec.validate()?;
    let n = (spec.duration_s * spec.fs as f64).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SurrogateKind::Semg => gen_semg(spec, n, &mut rng),
        SurrogateKind::Ecg => gen_ecg(spec, n, &mut rng),
    }
}

fn gen_semg(spec: &SurrogateSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let fs = spec.fs as f64;
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let sos = butterworth(
        FilterKind::Bandpass,
        &[spec.semg_band.0, spec.semg_band.1],
        4,
        fs,
    )?;
    let band = sos.filtfilt(&noise);

    // Alternating rest/contraction levels, smoothed into a slow envelope.
    let mut levels = Vec::with_capacity(n);
    let mut active = rng.gen_bool(0.5);
    while levels.len() < n {
        let dur = (rng.gen_range(0.5..2.0) * fs) as usize;
        let level = if active { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.1..0.25) };
        levels.extend(std::iter::repeat(level).take(dur.max(1)));
        active = !active;
    }
    levels.truncate(n);
    let envelope = moving_average(&levels, ((0.25 * fs) as usize).max(1));

    let mut x: Vec<f64> = band.iter().zip(&envelope).map(|(s, e)| s * e).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    Waveform::new(x, spec.fs, format!("semg-surrogate-{}", spec.seed))
}

fn gen_ecg(spec: &SurrogateSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Waveform> {
    let fs = spec.fs as f64;
    let width = ((spec.ecg_template_width_s * fs).round() as usize).max(2);
    let template = biphasic_template(width);
    let period = 60.0 / spec.ecg_rate_bpm;
    let mut x = vec![0.0; n];
    let mut beat = rng.gen_range(0.0..period);
    let duration = n as f64 / fs;
    while beat < duration {
        let start = (beat * fs).round() as isize - (width / 2) as isize;
        for (k, &v) in template.iter().enumerate() {
            let i = start + k as isize;
            if i >= 0 && (i as usize) < n {
                x[i as usize] += v;
            }
        }
        beat += period * (1.0 + rng.gen_range(-0.05..0.05));
    }
    Waveform::new(x, spec.fs, format!("ecg-surrogate-{}", spec.seed))
}

/// Centered moving average with edge renormalization.
fn moving_average(x: &[f64], win: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let half = win / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn periodogram(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
        buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    #[test]
    fn semg_is_deterministic() {
        let spec = SurrogateSpec::semg(5.0, 1000, 7);
        assert_eq!(gen_surrogate(&spec).unwrap(), gen_surrogate(&spec).unwrap());
        let other = SurrogateSpec { seed: 8, ..spec.clone() };
        assert_ne!(gen_surrogate(&spec).unwrap(), gen_surrogate(&other).unwrap());
    }

    #[test]
    fn semg_power_is_in_band() {
        for seed in 0..5 {
            let spec = SurrogateSpec::semg(5.0, 1000, seed);
            let w = gen_surrogate(&spec).unwrap();
            let p = periodogram(w.samples());
            let df = 1000.0 / w.len() as f64;
            let total: f64 = p.iter().sum();
            let inside: f64 = p
                .iter()
                .enumerate()
                .filter(|(k, _)| {
                    let f = *k as f64 * df;
                    f >= spec.semg_band.0 && f <= spec.semg_band.1
                })
                .map(|(_, v)| v)
                .sum();
            assert!(inside / total >= 0.95, "seed {seed}: {}", inside / total);
            let peak = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ecg_autocorrelation_peaks_at_beat_period() {
        let w = gen_surrogate(&SurrogateSpec::ecg(10.0, 1000, 3, 60.0)).unwrap();
        let x = w.samples();
        let ac = |lag: usize| -> f64 { x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() };
        let best = (500..1500).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
        assert!((best as f64 / 1000.0 - 1.0).abs() <= 0.05, "lag {best}");
    }

    #[test]
    fn ecg_energy_is_low_frequency() {
        let w = gen_surrogate(&SurrogateSpec::ecg(10.0, 1000, 4, 72.0)).unwrap();
        let p = periodogram(w.samples());
        let df = 1000.0 / w.len() as f64;
        let total: f64 = p.iter().sum();
        let below: f64 = p.iter().enumerate().filter(|(k, _)| (*k as f64) * df < 100.0).map(|(_, v)| v).sum();
        assert!(below / total > 0.9, "{}", below / total);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SurrogateSpec::ecg(1.0, 1000, 0, 200.0);
        assert!(gen_surrogate(&s).is_err());
        s.ecg_rate_bpm = 60.0;
        s.semg_band = (20.0, 600.0);
        assert!(gen_surrogate(&s).is_err());
        s.semg_band = (20.0, 400.0);
        s.duration_s = 0.0;
        assert!(gen_surrogate(&s).is_err());
    }

    #[test]
    fn template_is_biphasic_and_zero_mean() {
        let t = biphasic_template(80);
        assert!(t.iter().sum::<f64>().abs() < 1e-12);
        assert!(t[20] > 0.99 && t[60] < -0.99);
    }
}
