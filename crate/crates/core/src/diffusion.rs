//! Forward noising, the ε-matching objective, and ancestral sampling
//! conditioned on the noisy recording.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{CondFeatures, Scalar, ScoreNetParams};
use crate::schedules::{draw_alpha_bar, NoiseSchedule};

/// Anything that predicts the injected noise from a diffused segment, the
/// noisy condition, and the noise scale √ᾱ.
pub trait EpsModel: Sync {
    /// Work that depends only on the noisy condition, reused across steps.
    type Cond: Send + Sync;

    fn condition(&self, x_tilde: &[f64]) -> Result<Self::Cond>;

    fn predict(&self, x_t: &[f64], cond: &Self::Cond, noise_scale: f64) -> Result<Vec<f64>>;
}

fn to_scalar<S: Scalar>(x: &[f64]) -> Vec<S> {
    x.iter().map(|&v| S::of(v)).collect()
}

impl<S: Scalar> EpsModel for ScoreNetParams<S> {
    type Cond = CondFeatures<S>;

    fn condition(&self, x_tilde: &[f64]) -> Result<CondFeatures<S>> {
        ScoreNetParams::condition(self, &to_scalar(x_tilde))
    }

    fn predict(&self, x_t: &[f64], cond: &CondFeatures<S>, noise_scale: f64) -> Result<Vec<f64>> {
        ScoreNetParams::predict(self, &to_scalar(x_t), cond, noise_scale)
            .map(|y| y.into_iter().map(Scalar::f64).collect())
    }
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
pub fn q_sample(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::Contract(format!("alpha_bar {alpha_bar} outside (0, 1]")));
    }
    if x0.len() != eps.len() {
        return Err(Error::Contract(format!(
            "x0 has {} samples, eps has {}",
            x0.len(),
            eps.len()
        )));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One minibatch of the training objective. `noise_scale` holds the drawn
/// √ᾱ-level values; the diffused input uses `noise_scale²` as ᾱ.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x0: Vec<Vec<f64>>,
    pub x_tilde: Vec<Vec<f64>>,
    pub noise_scale: Vec<f64>,
    pub eps: Vec<Vec<f64>>,
}

impl TrainingBatch {
    /// Draws step, continuous noise scale and Gaussian noise for every pair.
    pub fn draw(
        x0: Vec<Vec<f64>>,
        x_tilde: Vec<Vec<f64>>,
        sched: &NoiseSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut noise_scale = Vec::with_capacity(x0.len());
        let mut eps = Vec::with_capacity(x0.len());
        for x in &x0 {
            let t = rng.gen_range(1..=sched.steps());
            let u: f64 = rng.gen_range(0.0..1.0);
            noise_scale.push(draw_alpha_bar(sched, t, u)?);
            eps.push((0..x.len()).map(|_| rng.sample(StandardNormal)).collect());
        }
        let batch = Self {
            x0,
            x_tilde,
            noise_scale,
            eps,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if self.x_tilde.len() != n || self.eps.len() != n || self.noise_scale.len() != n {
            return Err(Error::Contract("batch fields have different item counts".into()));
        }
        for i in 0..n {
            let l = self.x0[i].len();
            if self.x_tilde[i].len() != l || self.eps[i].len() != l {
                return Err(Error::Contract(format!("item {i} has mismatched shapes")));
            }
            let s = self.noise_scale[i];
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Contract(format!("item {i} noise scale {s} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn diffused(&self, i: usize) -> Result<Vec<f64>> {
        let s = self.noise_scale[i];
        q_sample(&self.x0[i], s * s, &self.eps[i])
    }

    fn total_samples(&self) -> usize {
        self.x0.iter().map(Vec::len).sum()
    }
}

/// Mean squared error between the drawn noise and the model's prediction.
pub fn training_loss<M: EpsModel>(model: &M, batch: &TrainingBatch) -> Result<f64> {
    batch.validate()?;
    let sums = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let cond = model.condition(&batch.x_tilde[i])?;
            let pred = model.predict(&batch.diffused(i)?, &cond, batch.noise_scale[i])?;
            Ok(pred
                .iter()
                .zip(&batch.eps[i])
                .map(|(p, e)| (p - e) * (p - e))
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.iter().sum::<f64>() / batch.total_samples() as f64)
}

/// Loss and its gradient with respect to every network parameter.
/// Per-item gradients are reduced in item order, so the result does not
/// depend on thread scheduling.
pub fn loss_and_grad<S: Scalar>(
    params: &ScoreNetParams<S>,
    batch: &TrainingBatch,
) -> Result<(f64, Vec<S>)> {
    batch.validate()?;
    let norm = 1.0 / batch.total_samples() as f64;
    let items = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let x_t: Vec<S> = to_scalar(&batch.diffused(i)?);
            let x_tilde: Vec<S> = to_scalar(&batch.x_tilde[i]);
            let (pred, trace) = params.forward_trace(&x_t, &x_tilde, batch.noise_scale[i])?;
            let mut sq = 0.0;
            let d: Vec<S> = pred
                .iter()
                .zip(&batch.eps[i])
                .map(|(&p, &e)| {
                    let r = p.f64() - e;
                    sq += r * r;
                    S::of(2.0 * r * norm)
                })
                .collect();
            let mut g = params.zeros_like();
            params.backward(&trace, &d, &mut g);
            Ok((sq, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for (sq, g) in items {
        total += sq;
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((total * norm, grads))
}

/// Reverse-process noise level σ_t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Posterior standard deviation `sqrt((1-ᾱ_{t-1})/(1-ᾱ_t) β_t)`.
    #[default]
    BetaTilde,
    Beta,
    Zero,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta_tilde" => Ok(Self::BetaTilde),
            "beta" => Ok(Self::Beta),
            "zero" => Ok(Self::Zero),
            _ => Err(Error::Config(format!(
                "sigma mode {s:?} (expected beta_tilde, beta or zero)"
            ))),
        }
    }
}

pub fn sigma(sched: &NoiseSchedule, t: usize, mode: SigmaMode) -> Result<f64> {
    let beta = sched.beta(t)?;
    Ok(match mode {
        SigmaMode::Zero => 0.0,
        SigmaMode::Beta => beta.sqrt(),
        SigmaMode::BetaTilde => {
            let ab = sched.alpha_bar(t)?;
            let ab_prev = sched.alpha_bar(t - 1)?;
            ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt()
        }
    })
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub sigma_mode: SigmaMode,
    pub seed: u64,
    /// Bound on the implied clean estimate at every step; `None` runs the
    /// plain ε update. See [`reverse_step_clipped`].
    pub x0_clip: Option<f64>,
}

/// `x_{t-1} = (x_t - (1-α_t)/sqrt(1-ᾱ_t) ε̂) / sqrt(α_t) + σ_t z`.
pub fn reverse_step_with<M: EpsModel>(
    model: &M,
    x_t: &[f64],
    cond: &M::Cond,
    t: usize,
    sched: &NoiseSchedule,
    sigma_mode: SigmaMode,
    z: &[f64],
) -> Result<Vec<f64>> {
    let alpha = sched.alpha(t)?;
    let alpha_bar = sched.alpha_bar(t)?;
    if z.len() != x_t.len() {
        return Err(Error::Contract("noise and state lengths differ".into()));
    }
    if t == 1 && z.iter().any(|&v| v != 0.0) {
        return Err(Error::Contract("the final step takes no noise".into()));
    }
    let eps = model.predict(x_t, cond, alpha_bar.sqrt())?;
    if eps.len() != x_t.len() {
        return Err(Error::Contract("model output length differs from input".into()));
    }
    let coef = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sig = sigma(sched, t, sigma_mode)?;
    Ok(x_t
        .iter()
        .zip(&eps)
        .zip(z)
        .map(|((&x, &e), &zz)| inv_sqrt_alpha * (x - coef * e) + sig * zz)
        .collect())
}

/// Reverse step through the implied clean estimate
/// `x̂0 = (x_t - sqrt(1-ᾱ_t) ε̂) / sqrt(ᾱ_t)`, clamped to `[-clip, clip]`,
/// followed by the posterior mean
/// `sqrt(ᾱ_{t-1}) β_t/(1-ᾱ_t) x̂0 + sqrt(α_t)(1-ᾱ_{t-1})/(1-ᾱ_t) x_t`.
/// Identical to [`reverse_step_with`] while the clamp is inactive. Near
/// t = T the ε update divides by sqrt(α_T), which the 0.999 β clip makes
/// about 0.03, so small prediction errors would otherwise blow up.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_clipped<M: EpsModel>(
    model: &M,
    x_t: &[f64],
    cond: &M::Cond,
    t: usize,
    sched: &NoiseSchedule,
    sigma_mode: SigmaMode,
    z: &[f64],
    clip: f64,
) -> Result<Vec<f64>> {
    if !(clip > 0.0) {
        return Err(Error::Parameter(format!("x0 clip {clip} must be positive")));
    }
    let (alpha, alpha_bar, ab_prev, beta) = (
        sched.alpha(t)?,
        sched.alpha_bar(t)?,
        sched.alpha_bar(t - 1)?,
        sched.beta(t)?,
    );
    if z.len() != x_t.len() {
        return Err(Error::Contract("noise and state lengths differ".into()));
    }
    if t == 1 && z.iter().any(|&v| v != 0.0) {
        return Err(Error::Contract("the final step takes no noise".into()));
    }
    let eps = model.predict(x_t, cond, alpha_bar.sqrt())?;
    if eps.len() != x_t.len() {
        return Err(Error::Contract("model output length differs from input".into()));
    }
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let c0 = ab_prev.sqrt() * beta / (1.0 - alpha_bar);
    let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - alpha_bar);
    let sig = sigma(sched, t, sigma_mode)?;
    Ok(x_t
        .iter()
        .zip(&eps)
        .zip(z)
        .map(|((&x, &e), &zz)| {
            let x0 = ((x - sb * e) / sa).clamp(-clip, clip);
            c0 * x0 + ct * x + sig * zz
        })
        .collect())
}

/// Single reverse step from the raw noisy condition.
pub fn reverse_step<M: EpsModel>(
    model: &M,
    x_t: &[f64],
    x_tilde: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    sigma_mode: SigmaMode,
    z: &[f64],
) -> Result<Vec<f64>> {
    let cond = model.condition(x_tilde)?;
    reverse_step_with(model, x_t, &cond, t, sched, sigma_mode, z)
}

/// Runs the chain from a given `x_T` down to an `x_0` estimate. Step noise is
/// drawn from a generator seeded with `cfg.seed`.
pub fn sample_from<M: EpsModel>(
    model: &M,
    x_tilde: &[f64],
    x_big_t: Vec<f64>,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if x_big_t.len() != x_tilde.len() {
        return Err(Error::Contract("initial state and condition lengths differ".into()));
    }
    let cond = model.condition(x_tilde)?;
    let n = x_tilde.len();
    let mut x = x_big_t;
    let zeros = vec![0.0; n];
    for t in (1..=cfg.schedule.steps()).rev() {
        let z: Vec<f64> = if t > 1 && cfg.sigma_mode != SigmaMode::Zero {
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            zeros.clone()
        };
        x = match cfg.x0_clip {
            None => reverse_step_with(model, &x, &cond, t, &cfg.schedule, cfg.sigma_mode, &z)?,
            Some(c) => reverse_step_clipped(model, &x, &cond, t, &cfg.schedule, cfg.sigma_mode, &z, c)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: t });
        }
    }
    Ok(x)
}

/// Draws `x_T ~ N(0, I)` and runs the full reverse chain.
pub fn sample<M: EpsModel>(model: &M, x_tilde: &[f64], cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x_big_t = (0..x_tilde.len()).map(|_| rng.sample(StandardNormal)).collect();
    sample_from(model, x_tilde, x_big_t, cfg, &mut rng)
}
