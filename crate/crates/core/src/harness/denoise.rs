//! Batch application of a denoiser to a segment file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::Manifest;
use super::prepare::segment_id;
use super::seeds::derive_seed;
use crate::baselines::{hp_denoise, ts_denoise, TsConfig};
use crate::diffusion::{sample, SamplerConfig};
use crate::error::{Error, Result};
use crate::ingest::{read_segments_with_fs, write_segments};
use crate::nn::{load_checkpoint, ScoreNetParams};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Sdemg,
    Hp,
    Ts,
    Identity,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sdemg, Method::Hp, Method::Ts, Method::Identity];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sdemg => "sdemg",
            Self::Hp => "hp",
            Self::Ts => "ts",
            Self::Identity => "identity",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdemg" => Ok(Self::Sdemg),
            "hp" => Ok(Self::Hp),
            "ts" => Ok(Self::Ts),
            "identity" => Ok(Self::Identity),
            _ => Err(Error::Config(format!("unknown method {s:?} (sdemg, hp, ts, identity)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseSummary {
    pub output: PathBuf,
    pub manifest: PathBuf,
    pub count: usize,
    /// Segment ids that failed and were passed through unchanged.
    pub failed: Vec<String>,
}

/// Path of the sidecar manifest written next to a denoised file.
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

enum Outcome {
    Done(Waveform, Option<bool>),
    Failed(Waveform, String),
}

/// Denoises every segment of `input` into `output`. A segment that cannot
/// be processed is written through unchanged and its error recorded in the
/// sidecar manifest, so the output stays aligned with the input.
pub fn cmd_denoise(
    cfg: &ExperimentConfig,
    method: Method,
    input: &Path,
    output: &Path,
    seed: u64,
) -> Result<DenoiseSummary> {
    let (fs, noisy) = read_segments_with_fs(input)?;
    let model: Option<ScoreNetParams<f32>> = match method {
        Method::Sdemg => Some(load_checkpoint(cfg.checkpoint())?),
        _ => None,
    };
    let sched = cfg.schedule()?;
    let ts_cfg = TsConfig::default();

    let outcomes: Vec<Outcome> = noisy
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let seg_seed = derive_seed(seed, &segment_id(i));
            let result = match method {
                Method::Identity => Ok((w.clone(), None)),
                Method::Hp => hp_denoise(w).map(|d| (d, None)),
                Method::Ts => ts_denoise(w, &ts_cfg).map(|o| (o.denoised, Some(o.fallback))),
                Method::Sdemg => {
                    let sampler = SamplerConfig {
                        schedule: sched.clone(),
                        sigma_mode: cfg.sigma_mode,
                        seed: seg_seed,
                        x0_clip: (cfg.x0_clip > 0.0).then_some(cfg.x0_clip),
                    };
                    let model = model.as_ref().expect("loaded above");
                    sample(model, w.samples(), &sampler)
                        .and_then(|x| w.with_samples(x))
                        .map(|d| (d, None))
                }
            };
            match result {
                Ok((d, fb)) => Outcome::Done(d, fb),
                Err(e) => Outcome::Failed(w.clone(), e.to_string()),
            }
        })
        .collect();

    let mut m = Manifest::new();
    m.set("method", method);
    m.set("seed", seed);
    m.set("input", input.display());
    m.set("count", outcomes.len());
    if method == Method::Sdemg {
        m.set("checkpoint", cfg.checkpoint().display());
        m.set("T", cfg.steps);
        m.set("sigma_mode", format!("{:?}", cfg.sigma_mode));
        m.set("x0_clip", cfg.x0_clip);
    }
    let mut out = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        let id = segment_id(i);
        if method == Method::Sdemg {
            m.set(format!("segment.{id}.seed"), derive_seed(seed, &id));
        }
        match o {
            Outcome::Done(w, fallback) => {
                if let Some(fb) = fallback {
                    m.set(format!("segment.{id}.ts_fallback"), fb);
                }
                out.push(w);
            }
            Outcome::Failed(w, msg) => {
                log::warn!("segment {id}: {msg}");
                m.set(format!("segment.{id}.error"), msg.replace('\n', " "));
                failed.push(id);
                out.push(w);
            }
        }
    }
    m.set("failed", failed.len());
    if let Some(d) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    write_segments(output, fs, &out)?;
    let manifest = sidecar_path(output);
    m.write(&manifest)?;
    Ok(DenoiseSummary {
        output: output.to_path_buf(),
        manifest,
        count: out.len(),
        failed,
    })
}
