//! Cosine noise schedule and the noise-scale table used for continuous
//! conditioning.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
pub const DEFAULT_BETA_CLIP: f64 = 0.999;

/// Precomputed tables for `steps` diffusion steps. Step indices are 1-based
/// in the accessors; `gammas[0] == 1` and `gammas[t] == sqrt(alpha_bar_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    gammas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `steps + 1` entries, decreasing from 1.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::Index {
                index: t,
                max: self.steps,
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t - 1])
    }

    /// Cumulative product up to `t`; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    pub fn gamma(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::Index {
                index: t,
                max: self.steps,
            });
        }
        Ok(self.gammas[t])
    }
}

/// Cosine schedule: `alpha_bar_t = f(t) / f(0)` with
/// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`, betas clipped at `beta_clip`.
pub fn cosine_schedule(steps: usize, s: f64, beta_clip: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Parameter("schedule needs at least one step".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Parameter(format!("cosine offset {s} must be in (0, 1)")));
    }
    if !(beta_clip > 0.0 && beta_clip < 1.0) {
        return Err(Error::Parameter(format!("beta clip {beta_clip} must be in (0, 1)")));
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + s) / (1.0 + s)) * FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let mut betas = Vec::with_capacity(steps);
    let mut prev = 1.0;
    for t in 1..=steps {
        let ab = f(t) / f0;
        betas.push((1.0 - ab / prev).min(beta_clip));
        prev = ab;
    }
    Ok(from_betas(betas))
}

/// Derives the remaining tables from per-step betas.
fn from_betas(betas: Vec<f64>) -> NoiseSchedule {
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(alphas.len());
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let gammas = std::iter::once(1.0)
        .chain(alpha_bars.iter().map(|ab| ab.sqrt()))
        .collect();
    NoiseSchedule {
        steps: betas.len(),
        betas,
        alphas,
        alpha_bars,
        gammas,
    }
}

/// Continuous noise-scale draw for step `t`: `gamma_t + u (gamma_{t-1} - gamma_t)`,
/// which lies in `[gamma_t, gamma_{t-1})` for `u` in `[0, 1)`.
pub fn draw_alpha_bar(sched: &NoiseSchedule, t: usize, u: f64) -> Result<f64> {
    sched.check(t)?;
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Parameter(format!("uniform draw {u} outside [0, 1)")));
    }
    let (hi, lo) = (sched.gammas[t - 1], sched.gammas[t]);
    Ok(lo + u * (hi - lo))
}
