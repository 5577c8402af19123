//! Butterworth IIR design (bilinear transform, second-order sections) and
//! zero-phase forward-backward application.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + z1 * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z1 * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// A cascade of second-order sections with the sampling rate it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl Sos {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / self.fs;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Causal single pass. `init` scales the steady-state initial conditions.
    pub fn filter_in_place(&self, x: &mut [f64], init: Option<f64>) {
        let mut scale = init.unwrap_or(0.0);
        for s in &self.sections {
            let [mut z1, mut z2] = if init.is_some() {
                let st = s.step_state();
                [st[0] * scale, st[1] * scale]
            } else {
                [0.0, 0.0]
            };
            scale *= s.dc_gain();
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering with odd-reflection padding and
    /// steady-state initial conditions. Length is preserved.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        let x0 = ext[0];
        self.filter_in_place(&mut ext, Some(x0));
        ext.reverse();
        let y0 = ext[0];
        self.filter_in_place(&mut ext, Some(y0));
        ext.reverse();
        ext.drain(..pad);
        ext.truncate(n);
        ext
    }
}

fn bilinear(s: Complex64, fs2: f64) -> Complex64 {
    (fs2 + s) / (fs2 - s)
}

/// Designs a digital Butterworth filter. `cutoffs_hz` holds one edge for
/// low/high-pass and two (low, high) for band-pass. A band-pass of `order`
/// N has 2N poles.
pub fn butterworth(kind: FilterKind, cutoffs_hz: &[f64], order: usize, fs: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::Parameter("filter order must be at least 1".into()));
    }
    if !(fs > 0.0) {
        return Err(Error::Parameter(format!("sampling rate {fs} must be positive")));
    }
    let nyq = fs / 2.0;
    let expected = if kind == FilterKind::Bandpass { 2 } else { 1 };
    if cutoffs_hz.len() != expected {
        return Err(Error::Parameter(format!(
            "{kind:?} needs {expected} cutoff(s), got {}",
            cutoffs_hz.len()
        )));
    }
    for &c in cutoffs_hz {
        if !(c > 0.0 && c < nyq) {
            return Err(Error::Parameter(format!(
                "cutoff {c} Hz must lie strictly inside (0, {nyq}) Hz"
            )));
        }
    }
    if kind == FilterKind::Bandpass && cutoffs_hz[0] >= cutoffs_hz[1] {
        return Err(Error::Parameter(format!(
            "band edges must be increasing, got {cutoffs_hz:?}"
        )));
    }

    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();
    let proto: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // analog poles, digital zeros, and the reference frequency for unit gain
    let (analog_poles, zeros, omega_ref): (Vec<Complex64>, Vec<f64>, f64) = match kind {
        FilterKind::Lowpass => {
            let wc = warp(cutoffs_hz[0]);
            (proto.iter().map(|p| p * wc).collect(), vec![-1.0; order], 0.0)
        }
        FilterKind::Highpass => {
            let wc = warp(cutoffs_hz[0]);
            (proto.iter().map(|p| wc / p).collect(), vec![1.0; order], PI)
        }
        FilterKind::Bandpass => {
            let (w1, w2) = (warp(cutoffs_hz[0]), warp(cutoffs_hz[1]));
            let bw = w2 - w1;
            let w0sq = w1 * w2;
            let mut poles = Vec::with_capacity(2 * order);
            for p in &proto {
                let half = p * (bw / 2.0);
                let disc = (half * half - w0sq).sqrt();
                poles.push(half + disc);
                poles.push(half - disc);
            }
            let zeros = (0..2 * order)
                .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            let omega0 = 2.0 * (w0sq.sqrt() / fs2).atan();
            (poles, zeros, omega0)
        }
    };

    let digital: Vec<Complex64> = analog_poles.iter().map(|&s| bilinear(s, fs2)).collect();
    let tol = 1e-10;
    let mut complex_upper: Vec<Complex64> =
        digital.iter().copied().filter(|p| p.im > tol).collect();
    let mut reals: Vec<f64> = digital
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    // poles nearest the unit circle last, conventional for cascades
    complex_upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    reals.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mut pole_groups: Vec<[f64; 3]> = Vec::new();
    let mut pole_counts: Vec<usize> = Vec::new();
    for p in &complex_upper {
        pole_groups.push([1.0, -2.0 * p.re, p.norm_sqr()]);
        pole_counts.push(2);
    }
    for pair in reals.chunks(2) {
        match *pair {
            [p1, p2] => {
                pole_groups.push([1.0, -(p1 + p2), p1 * p2]);
                pole_counts.push(2);
            }
            [p] => {
                pole_groups.push([1.0, -p, 0.0]);
                pole_counts.push(1);
            }
            _ => unreachable!(),
        }
    }

    let mut zi = zeros.into_iter();
    let mut sections = Vec::with_capacity(pole_groups.len());
    for (a, count) in pole_groups.into_iter().zip(pole_counts) {
        let b = if count == 2 {
            let (z1, z2) = (zi.next().unwrap_or(0.0), zi.next().unwrap_or(0.0));
            [1.0, -(z1 + z2), z1 * z2]
        } else {
            [1.0, -zi.next().unwrap_or(0.0), 0.0]
        };
        let mut sec = Biquad { b, a };
        let g = sec.response(omega_ref).norm();
        for v in &mut sec.b {
            *v /= g;
        }
        sections.push(sec);
    }
    let mut sos = Sos { sections, fs };
    if sos.response(omega_ref * fs / (2.0 * PI)).re < 0.0 {
        for v in &mut sos.sections[0].b {
            *v = -*v;
        }
    }
    Ok(sos)
}

/// Zero-phase Butterworth filtering of a waveform.
pub fn butterworth_filter(
    w: &Waveform,
    kind: FilterKind,
    cutoffs_hz: &[f64],
    order: usize,
) -> Result<Waveform> {
    let sos = butterworth(kind, cutoffs_hz, order, w.fs() as f64)?;
    w.with_samples(sos.filtfilt(w.samples()))
}
