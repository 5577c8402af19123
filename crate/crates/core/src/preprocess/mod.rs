//! Filtering, resampling, normalization, segmentation and SNR-exact mixing.

mod filter;
mod resample;

pub use filter::{butterworth, butterworth_filter, Biquad, FilterKind, Sos};
pub use resample::{resample, resample_ratio};

use crate::error::{Error, Result};
use crate::waveform::Waveform;

/// Rate every segment is brought to before mixing and modelling.
pub const MODEL_FS: u32 = 1000;

/// Clean segment, the interference actually added, and their sum.
#[derive(Debug, Clone)]
pub struct SegmentPair {
    pub clean: Waveform,
    pub ecg: Waveform,
    pub noisy: Waveform,
    pub target_snr_db: f64,
    /// Multiplier applied to the raw interference.
    pub scale: f64,
}

/// Divides by the largest absolute sample. Returns the divisor.
pub fn normalize_maxabs(w: &Waveform) -> Result<(Waveform, f64)> {
    let scale = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero signal".into()));
    }
    let out = w.with_samples(w.samples().iter().map(|v| v / scale).collect())?;
    Ok((out, scale))
}

/// Non-overlapping windows of `round(seconds * fs)` samples; the trailing
/// remainder is dropped.
pub fn segment(w: &Waveform, seconds: f64) -> Result<Vec<Waveform>> {
    if !(seconds > 0.0) {
        return Err(Error::Parameter(format!("segment length {seconds} s must be positive")));
    }
    let len = (seconds * w.fs() as f64).round() as usize;
    if len == 0 {
        return Err(Error::Parameter(format!(
            "segment length {seconds} s is shorter than one sample at {} Hz",
            w.fs()
        )));
    }
    w.samples()
        .chunks_exact(len)
        .enumerate()
        .map(|(i, c)| Waveform::new(c.to_vec(), w.fs(), format!("{}/{i}", w.label)))
        .collect()
}

/// Scales `ecg` so that `10 log10(P(clean) / P(scale * ecg)) == target_snr_db`
/// and adds it to `clean`.
pub fn mix_at_snr(clean: &Waveform, ecg: &Waveform, target_snr_db: f64) -> Result<SegmentPair> {
    if clean.len() != ecg.len() || clean.fs() != ecg.fs() {
        return Err(Error::Contract(format!(
            "mixing needs equal shapes: clean {}@{} Hz, ecg {}@{} Hz",
            clean.len(),
            clean.fs(),
            ecg.len(),
            ecg.fs()
        )));
    }
    if !target_snr_db.is_finite() {
        return Err(Error::Parameter(format!("target SNR {target_snr_db} dB")));
    }
    let pc = clean.power();
    let pe = ecg.power();
    if pc == 0.0 || pe == 0.0 {
        return Err(Error::Degenerate("mixing requires nonzero power in both inputs".into()));
    }
    let scale = (pc / (pe * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = ecg.samples().iter().map(|v| v * scale).collect();
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .zip(&scaled)
        .map(|(c, e)| c + e)
        .collect();
    Ok(SegmentPair {
        clean: clean.clone(),
        ecg: ecg.with_samples(scaled)?,
        noisy: clean.with_samples(noisy)?,
        target_snr_db,
        scale,
    })
}

/// sEMG conditioning: 4th-order 20-500 Hz band-pass at the acquisition rate,
/// then resampling to `target_fs`. The upper edge is pulled below Nyquist for
/// sources recorded at 1 kHz or less.
pub fn condition_semg(w: &Waveform, target_fs: u32) -> Result<Waveform> {
    let hi = 500f64.min(0.45 * w.fs() as f64);
    let band = butterworth_filter(w, FilterKind::Bandpass, &[20.0, hi], 4)?;
    resample(&band, target_fs)
}

/// ECG conditioning: resample to `target_fs`, then 3rd-order 10 Hz high-pass
/// and 200 Hz low-pass.
pub fn condition_ecg(w: &Waveform, target_fs: u32) -> Result<Waveform> {
    let up = resample(w, target_fs)?;
    let hp = butterworth_filter(&up, FilterKind::Highpass, &[10.0], 3)?;
    butterworth_filter(&hp, FilterKind::Lowpass, &[200.0], 3)
}

/// SNR of `signal` relative to `interference`, in dB.
#[cfg(test)]
pub(crate) fn power_ratio_db(signal: &[f64], interference: &[f64]) -> f64 {
    use crate::waveform::mean_power;
    10.0 * (mean_power(signal) / mean_power(interference)).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 1000, "t").unwrap()
    }

    #[test]
    fn normalize_examples() {
        let (w, s) = normalize_maxabs(&wave(vec![0.5, -0.25])).unwrap();
        assert_eq!(w.samples(), &[1.0, -0.5]);
        assert_eq!(s, 0.5);
        let (w2, s2) = normalize_maxabs(&w).unwrap();
        assert_eq!(w2.samples(), w.samples());
        assert_eq!(s2, 1.0);
        assert!(matches!(
            normalize_maxabs(&wave(vec![0.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn segment_examples() {
        let w = Waveform::new((0..25_000).map(|i| i as f64).collect(), 1000, "r").unwrap();
        let segs = segment(&w, 10.0).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.len() == 10_000));
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples().to_vec()).collect();
        assert_eq!(&joined[..], &w.samples()[..20_000]);

        let short = Waveform::new(vec![0.0; 5000], 1000, "s").unwrap();
        assert!(segment(&short, 10.0).unwrap().is_empty());
        assert!(segment(&short, 0.0).is_err());
    }

    #[test]
    fn mix_scale_closed_form() {
        let clean = wave(vec![1.0, -1.0, 1.0, -1.0]);
        let ecg = wave(vec![-1.0, -1.0, 1.0, 1.0]);
        let p = mix_at_snr(&clean, &ecg, 0.0).unwrap();
        assert!((p.scale - 1.0).abs() < 1e-15);
        let p = mix_at_snr(&clean, &ecg, -10.0).unwrap();
        assert!((p.scale - 10f64.sqrt()).abs() < 1e-12);
        assert!((p.scale - 3.16228).abs() < 1e-5);
    }

    #[test]
    fn mix_rejects_bad_input() {
        let clean = wave(vec![1.0, -1.0]);
        assert!(matches!(
            mix_at_snr(&clean, &wave(vec![0.0, 0.0]), -5.0),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&clean, &wave(vec![1.0, 1.0, 1.0]), -5.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn conditioned_ecg_has_model_rate() {
        let ecg = Waveform::new(
            (0..1280).map(|i| ((i % 128) as f64 / 20.0).sin()).collect(),
            128,
            "e",
        )
        .unwrap();
        let y = condition_ecg(&ecg, MODEL_FS).unwrap();
        assert_eq!(y.fs(), 1000);
        assert_eq!(y.len(), 10_000);
    }

    proptest! {
        #[test]
        fn mix_round_trip_snr(seed in any::<u64>(), snr in -15.0f64..=0.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 256;
            let clean = wave((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let ecg = wave((0..n).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let p = mix_at_snr(&clean, &ecg, snr).unwrap();
            let measured = power_ratio_db(p.clean.samples(), p.ecg.samples());
            prop_assert!((measured - snr).abs() < 1e-6);
            for i in 0..n {
                prop_assert_eq!(p.noisy.samples()[i], p.clean.samples()[i] + p.ecg.samples()[i]);
            }
        }

        #[test]
        fn normalize_is_scale_equivariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = normalize_maxabs(&wave(x.clone())).unwrap().0;
            let b = normalize_maxabs(&wave(x.iter().map(|v| v * c).collect())).unwrap().0;
            for (u, v) in a.samples().iter().zip(b.samples()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
