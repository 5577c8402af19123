//! Reconstruction and feature-fidelity metrics.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::waveform::Waveform;

/// Reported in place of +∞ when an estimate matches the reference exactly.
pub const SNR_CAP_DB: f64 = 300.0;
pub const DEFAULT_FEATURE_WINDOW_S: f64 = 0.5;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "signals have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `10 log10(Σ clean² / Σ (estimate - clean)²)`, capped at [`SNR_CAP_DB`].
pub fn snr_db(clean: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(clean, estimate)?;
    let signal: f64 = clean.iter().map(|c| c * c).sum();
    if signal == 0.0 {
        return Err(Error::Degenerate("reference signal has zero power".into()));
    }
    let noise: f64 = clean
        .iter()
        .zip(estimate)
        .map(|(c, e)| (e - c) * (e - c))
        .sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

pub fn snr_improvement(clean: &[f64], noisy: &[f64], denoised: &[f64]) -> Result<f64> {
    Ok(snr_db(clean, denoised)? - snr_db(clean, noisy)?)
}

pub fn rmse(clean: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(clean, estimate)?;
    if clean.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = clean
        .iter()
        .zip(estimate)
        .map(|(c, e)| (e - c) * (e - c))
        .sum();
    Ok((ss / clean.len() as f64).sqrt())
}

fn window_len(w: &Waveform, window_s: f64, min: usize) -> Result<usize> {
    let n = (window_s * w.fs() as f64).round();
    if !(n >= min as f64) {
        return Err(Error::Parameter(format!(
            "window of {window_s} s at {} Hz is shorter than {min} samples",
            w.fs()
        )));
    }
    Ok(n as usize)
}

/// Mean rectified amplitude per non-overlapping window.
pub fn arv_vector(w: &Waveform, window_s: f64) -> Result<Vec<f64>> {
    let n = window_len(w, window_s, 1)?;
    Ok(w
        .samples()
        .chunks_exact(n)
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n as f64)
        .collect())
}

/// Per-window mean frequencies; windows without power report 0 Hz and are
/// listed in `zero_power`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFrequencies {
    pub values: Vec<f64>,
    pub zero_power: Vec<usize>,
}

/// Spectral centroid of the one-sided rectangular-window periodogram of each
/// non-overlapping window, DC excluded.
pub fn mf_vector(w: &Waveform, window_s: f64) -> Result<MeanFrequencies> {
    let n = window_len(w, window_s, 8)?;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let df = w.fs() as f64 / n as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut out = MeanFrequencies {
        values: Vec::new(),
        zero_power: Vec::new(),
    };
    for (idx, chunk) in w.samples().chunks_exact(n).enumerate() {
        for (b, &v) in buf.iter_mut().zip(chunk) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
            let p = c.norm_sqr();
            num += k as f64 * df * p;
            den += p;
        }
        if den > 0.0 {
            out.values.push(num / den);
        } else {
            out.values.push(0.0);
            out.zero_power.push(idx);
        }
    }
    Ok(out)
}

pub fn feature_rmse(clean_vec: &[f64], est_vec: &[f64]) -> Result<f64> {
    rmse(clean_vec, est_vec)
}

/// All four criteria for one (clean, noisy, denoised) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub snr_in_db: f64,
    pub snr_out_db: f64,
    pub snr_imp_db: f64,
    pub rmse: f64,
    pub rmse_arv: f64,
    pub rmse_mf_hz: f64,
    pub n_windows: usize,
}

pub fn evaluate(
    clean: &Waveform,
    noisy: &Waveform,
    denoised: &Waveform,
    window_s: f64,
) -> Result<MetricsReport> {
    if clean.fs() != denoised.fs() || clean.fs() != noisy.fs() {
        return Err(Error::Contract("signals have different sampling rates".into()));
    }
    let snr_in_db = snr_db(clean.samples(), noisy.samples())?;
    let snr_out_db = snr_db(clean.samples(), denoised.samples())?;
    let arv_c = arv_vector(clean, window_s)?;
    let arv_d = arv_vector(denoised, window_s)?;
    let mf_c = mf_vector(clean, window_s)?;
    let mf_d = mf_vector(denoised, window_s)?;
    Ok(MetricsReport {
        snr_in_db,
        snr_out_db,
        snr_imp_db: snr_out_db - snr_in_db,
        rmse: rmse(clean.samples(), denoised.samples())?,
        rmse_arv: feature_rmse(&arv_c, &arv_d)?,
        rmse_mf_hz: feature_rmse(&mf_c.values, &mf_d.values)?,
        n_windows: arv_c.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: u32, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs as f64).sin())
            .collect()
    }

    fn wave(v: Vec<f64>, fs: u32) -> Waveform {
        Waveform::new(v, fs, "m").unwrap()
    }

    #[test]
    fn snr_examples() {
        let c = sine(10.0, 1000, 1000, 1.0);
        assert_eq!(snr_db(&c, &c).unwrap(), SNR_CAP_DB);
        let noise = sine(37.0, 1000, 1000, 1.0);
        let est: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| a + b).collect();
        assert!(snr_db(&c, &est).unwrap().abs() < 1e-9);
        assert!(matches!(snr_db(&[0.0; 4], &[1.0; 4]), Err(Error::Degenerate(_))));
        assert!(matches!(snr_db(&c, &c[..10]), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_denoiser_has_zero_improvement() {
        let c = sine(10.0, 1000, 500, 1.0);
        let n: Vec<f64> = c.iter().enumerate().map(|(i, v)| v + (i as f64).cos()).collect();
        assert_eq!(snr_improvement(&c, &n, &n).unwrap(), 0.0);
        let best = snr_improvement(&c, &n, &c).unwrap();
        assert_eq!(best, SNR_CAP_DB - snr_db(&c, &n).unwrap());
    }

    #[test]
    fn rmse_of_unit_sine() {
        let s = sine(50.0, 1000, 1000, 1.0);
        assert!((rmse(&vec![0.0; 1000], &s).unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(rmse(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn arv_examples() {
        let w = wave(vec![-0.7; 5000], 1000);
        let v = arv_vector(&w, 0.5).unwrap();
        assert_eq!(v.len(), 10);
        assert!(v.iter().all(|&a| (a - 0.7).abs() < 1e-12));
        let s = wave(sine(10.0, 1000, 10_000, 1.0), 1000);
        let v = arv_vector(&s, 5.0).unwrap();
        assert!(v.iter().all(|&a| (a - 2.0 / PI).abs() < 1e-3));
    }

    #[test]
    fn mf_of_pure_and_mixed_tones() {
        let s = wave(sine(100.0, 1000, 5000, 1.0), 1000);
        let mf = mf_vector(&s, 0.5).unwrap();
        assert_eq!(mf.values.len(), 10);
        assert!(mf.values.iter().all(|&f| (f - 100.0).abs() <= 2.0));

        let two: Vec<f64> = sine(100.0, 1000, 5000, 1.0)
            .iter()
            .zip(sine(300.0, 1000, 5000, 1.0))
            .map(|(a, b)| a + b)
            .collect();
        let mf = mf_vector(&wave(two, 1000), 0.5).unwrap();
        assert!(mf.values.iter().all(|&f| (f - 200.0).abs() <= 2.0));
    }

    #[test]
    fn mf_of_white_noise() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..5000).map(|_| r.sample(StandardNormal)).collect();
        let mf = mf_vector(&wave(x, 1000), 0.5).unwrap();
        assert!(mf.values.iter().all(|&f| (f - 250.0).abs() < 25.0), "{:?}", mf.values);
    }

    #[test]
    fn mf_flags_silent_windows() {
        let mut x = vec![0.0; 1000];
        x[700] = 1.0;
        let mf = mf_vector(&wave(x, 1000), 0.5).unwrap();
        assert_eq!(mf.values[0], 0.0);
        assert_eq!(mf.zero_power, vec![0]);
        assert!(mf_vector(&wave(vec![1.0; 100], 10), 0.5).is_err());
    }

    #[test]
    fn feature_rmse_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(feature_rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v - 2.5).collect();
        assert!((feature_rmse(&a, &b).unwrap() - 2.5).abs() < 1e-12);
        assert!(feature_rmse(&a, &b[..2]).is_err());
    }

    #[test]
    fn snr_decreases_with_added_noise() {
        let c = sine(10.0, 1000, 2000, 1.0);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let n: Vec<f64> = (0..2000).map(|_| r.sample(StandardNormal)).collect();
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let amp = 0.05 * 2f64.powi(k);
            let e: Vec<f64> = c.iter().zip(&n).map(|(a, b)| a + amp * b).collect();
            let s = snr_db(&c, &e).unwrap();
            assert!(s < last);
            last = s;
        }
    }

    proptest! {
        #[test]
        fn feature_scaling_laws(seed in any::<u64>(), c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..2000).map(|_| r.sample(StandardNormal)).collect();
            let w = wave(x.clone(), 1000);
            let ws = wave(x.iter().map(|v| v * c).collect(), 1000);
            let (a, b) = (arv_vector(&w, 0.5).unwrap(), arv_vector(&ws, 0.5).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((v - c.abs() * u).abs() < 1e-9 * (1.0 + v.abs()));
            }
            let (m1, m2) = (mf_vector(&w, 0.5).unwrap(), mf_vector(&ws, 0.5).unwrap());
            for (u, v) in m1.values.iter().zip(&m2.values) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
