//! Classical ECG-removal references: 40 Hz high-pass and template subtraction.

use crate::error::{Error, Result};
use crate::preprocess::{butterworth, butterworth_filter, FilterKind};
use crate::waveform::Waveform;

pub const HP_CUTOFF_HZ: f64 = 40.0;
pub const HP_ORDER: usize = 4;

/// Zero-phase 4th-order 40 Hz high-pass.
pub fn hp_denoise(noisy: &Waveform) -> Result<Waveform> {
    if noisy.fs() as f64 <= 2.0 * HP_CUTOFF_HZ {
        return Err(Error::Parameter(format!(
            "high-pass baseline needs fs > {} Hz, got {}",
            2.0 * HP_CUTOFF_HZ,
            noisy.fs()
        )));
    }
    butterworth_filter(noisy, FilterKind::Highpass, &[HP_CUTOFF_HZ], HP_ORDER)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsConfig {
    pub template_halfwidth_s: f64,
    pub detect_band_hz: (f64, f64),
    pub refractory_s: f64,
    pub min_beats: usize,
    /// Energy-envelope smoothing window.
    pub integration_s: f64,
    /// Window of the moving-average baseline the threshold is relative to.
    pub threshold_window_s: f64,
    /// Peaks must exceed this multiple of the moving-average baseline.
    pub threshold_factor: f64,
    /// Largest accepted coefficient of variation of the RR intervals.
    pub max_rr_cv: f64,
    /// Largest accepted coefficient of variation of the peak heights.
    pub max_height_cv: f64,
}

impl Default for TsConfig {
    fn default() -> Self {
        Self {
            template_halfwidth_s: 0.3,
            detect_band_hz: (10.0, 40.0),
            refractory_s: 0.4,
            min_beats: 3,
            integration_s: 0.05,
            threshold_window_s: 2.0,
            threshold_factor: 2.0,
            max_rr_cv: 0.1,
            max_height_cv: 0.25,
        }
    }
}

impl TsConfig {
    fn validate(&self) -> Result<()> {
        if !(self.template_halfwidth_s > 0.0 && self.refractory_s > 0.0) || self.min_beats == 0 {
            return Err(Error::Parameter(
                "template half-width, refractory period and minimum beat count must be positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

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

fn coeff_of_variation(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    if m == 0.0 {
        f64::INFINITY
    } else {
        var.sqrt() / m.abs()
    }
}

fn train_regularity(peaks: &[usize], env: &[f64]) -> (f64, f64) {
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let heights: Vec<f64> = peaks.iter().map(|&p| env[p]).collect();
    (coeff_of_variation(&rr), coeff_of_variation(&heights))
}

/// A regular train should leave no gap at either end longer than one and a
/// half mean RR intervals.
fn covers_record(peaks: &[usize], n: usize) -> bool {
    let (first, last) = (peaks[0], *peaks.last().unwrap());
    let mean_rr = (last - first) as f64 / (peaks.len() - 1) as f64;
    (first as f64) <= 1.5 * mean_rr && ((n - 1 - last) as f64) <= 1.5 * mean_rr
}

/// R-peak indices: local maxima of the smoothed squared band-filtered signal
/// above an adaptive moving-average threshold, at least one refractory period
/// apart, sorted ascending.
pub fn detect_r_peaks(noisy: &Waveform, cfg: &TsConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let fs = noisy.fs() as f64;
    let refractory = (cfg.refractory_s * fs).round() as usize;
    if (noisy.len() as f64) < 2.0 * cfg.refractory_s * fs {
        return Err(Error::Parameter(format!(
            "signal of {} samples is shorter than two refractory periods",
            noisy.len()
        )));
    }
    let sos = butterworth(
        FilterKind::Bandpass,
        &[cfg.detect_band_hz.0, cfg.detect_band_hz.1],
        3,
        fs,
    )?;
    let band = sos.filtfilt(noisy.samples());
    let energy: Vec<f64> = band.iter().map(|v| v * v).collect();
    let env = moving_average(&energy, ((cfg.integration_s * fs) as usize).max(1));
    let baseline = moving_average(&env, ((cfg.threshold_window_s * fs) as usize).max(1));

    let mut candidates: Vec<usize> = (1..env.len().saturating_sub(1))
        .filter(|&i| {
            env[i] > cfg.threshold_factor * baseline[i] && env[i] >= env[i - 1] && env[i] > env[i + 1]
        })
        .collect();
    // strongest first, then suppress neighbours within the refractory period
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut peaks: Vec<usize> = Vec::new();
    for c in candidates {
        if peaks.iter().all(|&p| p.abs_diff(c) >= refractory) {
            peaks.push(c);
        }
    }
    // drop weak stragglers relative to the typical beat
    if !peaks.is_empty() {
        let mut heights: Vec<f64> = peaks.iter().map(|&p| env[p]).collect();
        heights.sort_by(f64::total_cmp);
        let median = heights[heights.len() / 2];
        peaks.retain(|&p| env[p] >= 0.3 * median);
    }
    peaks.sort_unstable();
    if peaks.len() < cfg.min_beats {
        return Err(Error::InsufficientBeats {
            found: peaks.len(),
            needed: cfg.min_beats,
        });
    }
    // Muscle bursts also cross the threshold, but not as a regular train of
    // similar complexes. An irregular set counts as no beats at all.
    let (rr_cv, height_cv) = train_regularity(&peaks, &env);
    if rr_cv > cfg.max_rr_cv || height_cv > cfg.max_height_cv || !covers_record(&peaks, env.len()) {
        log::debug!("rejecting {} peaks: rr cv {rr_cv:.3}, height cv {height_cv:.3}", peaks.len());
        return Err(Error::InsufficientBeats {
            found: 0,
            needed: cfg.min_beats,
        });
    }
    Ok(peaks)
}

/// Averages full-width epochs around `peaks` into one template and subtracts
/// it at every peak; epochs cut by the signal edges are subtracted with the
/// matching part of the template.
pub fn subtract_template(x: &[f64], peaks: &[usize], halfwidth: usize) -> Result<Vec<f64>> {
    let n = x.len();
    let width = 2 * halfwidth + 1;
    let full: Vec<usize> = peaks
        .iter()
        .copied()
        .filter(|&p| p >= halfwidth && p + halfwidth < n)
        .collect();
    if full.is_empty() {
        return Err(Error::InsufficientBeats {
            found: 0,
            needed: 1,
        });
    }
    let mut template = vec![0.0; width];
    for &p in &full {
        for (t, v) in template.iter_mut().zip(&x[p - halfwidth..=p + halfwidth]) {
            *t += v;
        }
    }
    template.iter_mut().for_each(|t| *t /= full.len() as f64);

    let mut out = x.to_vec();
    for &p in peaks {
        for (k, &t) in template.iter().enumerate() {
            let i = p as isize - halfwidth as isize + k as isize;
            if i >= 0 && (i as usize) < n {
                out[i as usize] -= t;
            }
        }
    }
    Ok(out)
}

/// Result of template subtraction.
#[derive(Debug, Clone)]
pub struct TsOutcome {
    pub denoised: Waveform,
    pub beats: Vec<usize>,
    /// Set when detection failed and the high-pass result was returned instead.
    pub fallback: bool,
}

/// Template subtraction followed by the 40 Hz high-pass; falls back to the
/// high-pass alone when too few beats are found.
pub fn ts_denoise(noisy: &Waveform, cfg: &TsConfig) -> Result<TsOutcome> {
    let fallback = || -> Result<TsOutcome> {
        Ok(TsOutcome {
            denoised: hp_denoise(noisy)?,
            beats: Vec::new(),
            fallback: true,
        })
    };
    let beats = match detect_r_peaks(noisy, cfg) {
        Ok(b) => b,
        Err(Error::InsufficientBeats { .. }) => return fallback(),
        Err(e) => return Err(e),
    };
    let halfwidth = (cfg.template_halfwidth_s * noisy.fs() as f64).round() as usize;
    let residual = match subtract_template(noisy.samples(), &beats, halfwidth) {
        Ok(r) => r,
        Err(Error::InsufficientBeats { .. }) => return fallback(),
        Err(e) => return Err(e),
    };
    Ok(TsOutcome {
        denoised: hp_denoise(&noisy.with_samples(residual)?)?,
        beats,
        fallback: false,
    })
}
