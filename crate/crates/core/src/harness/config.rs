//! Experiment configuration: built-in profiles overlaid with a TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::SigmaMode;
use crate::error::{Error, Result};
use crate::nn::ScoreNetConfig;
use crate::schedules::{cosine_schedule, NoiseSchedule, DEFAULT_BETA_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Smoke,
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Self::Smoke),
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown profile {s:?} (smoke, desk, full)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Smoke => "smoke",
            Self::Desk => "desk",
            Self::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

/// Surrogate source corpus written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub semg_sources: usize,
    pub semg_source_s: f64,
    pub semg_fs: u32,
    pub ecg_sources: usize,
    pub ecg_source_s: f64,
    pub ecg_fs: u32,
    pub ecg_rate_bpm: (f64, f64),
}

/// Source counts per split. Clean and ECG sources never cross splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_sources: usize,
    pub val_sources: usize,
    pub test_sources: usize,
    pub train_ecg: usize,
    pub val_ecg: usize,
    pub test_ecg: usize,
    /// Pairs drawn per clean training segment.
    pub train_contaminations: usize,
    /// Pairs drawn per clean validation or test segment.
    pub eval_contaminations: usize,
}

/// Locations; unset entries live under `work_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub work_dir: Option<PathBuf>,
    pub corpus_dir: Option<PathBuf>,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub denoised_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub segment_s: f64,
    pub fs: u32,
    pub snr_grid_train: Vec<f64>,
    pub snr_grid_test: Vec<f64>,
    #[serde(rename = "T")]
    pub steps: usize,
    pub sched_s: f64,
    pub sigma_mode: SigmaMode,
    /// Clamp on the implied clean estimate during sampling; 0 disables.
    /// Clean segments are max-abs normalized, so 1 is the data range.
    pub x0_clip: f64,
    pub model: ScoreNetConfig,
    pub optimizer: OptimizerConfig,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    /// Optional WFDB headers replacing the surrogate ECG pool; channel 0 is used.
    #[serde(default)]
    pub ecg_wfdb: Vec<PathBuf>,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_train_grid() -> Vec<f64> {
    vec![-5.0, -7.0, -9.0, -11.0, -13.0, -15.0]
}

fn default_test_grid() -> Vec<f64> {
    (0..=7).map(|k| -14.0 + 2.0 * k as f64).collect()
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Smoke => Self {
                profile,
                seed: 1,
                segment_s: 1.0,
                fs: 1000,
                snr_grid_train: default_train_grid(),
                snr_grid_test: default_test_grid(),
                steps: 10,
                sched_s: 0.008,
                sigma_mode: SigmaMode::BetaTilde,
                x0_clip: 1.0,
                model: ScoreNetConfig {
                    segment_len: 1000,
                    base_channels: 8,
                    n_blocks: 1,
                    kernel_sizes: vec![3, 5, 9],
                    embed_dim: 16,
                },
                optimizer: OptimizerConfig {
                    learning_rate: 1e-3,
                    batch_size: 4,
                    epochs: 2,
                    seed: 7,
                    clip_norm: 1.0,
                },
                corpus: CorpusConfig {
                    semg_sources: 6,
                    semg_source_s: 2.0,
                    semg_fs: 2000,
                    ecg_sources: 4,
                    ecg_source_s: 10.0,
                    ecg_fs: 128,
                    ecg_rate_bpm: (55.0, 95.0),
                },
                split: SplitConfig {
                    train_sources: 4,
                    val_sources: 1,
                    test_sources: 1,
                    train_ecg: 2,
                    val_ecg: 1,
                    test_ecg: 1,
                    train_contaminations: 1,
                    eval_contaminations: 1,
                },
                ecg_wfdb: Vec::new(),
                paths: PathsConfig::default(),
            },
            Profile::Desk => Self {
                profile,
                seed: 1,
                segment_s: 5.0,
                fs: 1000,
                snr_grid_train: default_train_grid(),
                snr_grid_test: vec![-10.0],
                steps: 25,
                sched_s: 0.008,
                sigma_mode: SigmaMode::BetaTilde,
                x0_clip: 1.0,
                model: ScoreNetConfig {
                    segment_len: 5000,
                    base_channels: 16,
                    n_blocks: 4,
                    kernel_sizes: vec![3, 5, 9],
                    embed_dim: 32,
                },
                optimizer: OptimizerConfig {
                    learning_rate: 2e-4,
                    batch_size: 16,
                    epochs: 30,
                    seed: 7,
                    clip_norm: 1.0,
                },
                corpus: CorpusConfig {
                    semg_sources: 80,
                    semg_source_s: 20.0,
                    semg_fs: 2000,
                    ecg_sources: 16,
                    ecg_source_s: 60.0,
                    ecg_fs: 128,
                    ecg_rate_bpm: (55.0, 95.0),
                },
                split: SplitConfig {
                    train_sources: 50,
                    val_sources: 5,
                    test_sources: 25,
                    train_ecg: 10,
                    val_ecg: 3,
                    test_ecg: 3,
                    train_contaminations: 1,
                    eval_contaminations: 1,
                },
                ecg_wfdb: Vec::new(),
                paths: PathsConfig::default(),
            },
            Profile::Full => Self {
                profile,
                seed: 1,
                segment_s: 5.0,
                fs: 1000,
                snr_grid_train: default_train_grid(),
                snr_grid_test: default_test_grid(),
                steps: 200,
                sched_s: 0.008,
                sigma_mode: SigmaMode::BetaTilde,
                x0_clip: 1.0,
                model: ScoreNetConfig::default(),
                optimizer: OptimizerConfig {
                    learning_rate: 2e-4,
                    batch_size: 16,
                    epochs: 200,
                    seed: 7,
                    clip_norm: 1.0,
                },
                corpus: CorpusConfig {
                    semg_sources: 400,
                    semg_source_s: 60.0,
                    semg_fs: 2000,
                    ecg_sources: 18,
                    ecg_source_s: 600.0,
                    ecg_fs: 128,
                    ecg_rate_bpm: (50.0, 100.0),
                },
                split: SplitConfig {
                    train_sources: 300,
                    val_sources: 30,
                    test_sources: 70,
                    train_ecg: 12,
                    val_ecg: 3,
                    test_ecg: 3,
                    train_contaminations: 10,
                    eval_contaminations: 8,
                },
                ecg_wfdb: Vec::new(),
                paths: PathsConfig::default(),
            },
        }
    }

    /// Parses a TOML document over the profile it names (or `fallback`).
    pub fn from_toml_str(text: &str, fallback: Profile) -> Result<Self> {
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let profile = match overlay.get("profile") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(v) => return Err(Error::Config(format!("profile must be a string, got {v}"))),
            None => fallback,
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overlay);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, fallback: Profile) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, fallback)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.snr_grid_train.is_empty() || self.snr_grid_test.is_empty() {
            return bad("SNR grids must be non-empty".into());
        }
        if self.snr_grid_train.iter().chain(&self.snr_grid_test).any(|v| !v.is_finite()) {
            return bad("SNR grid values must be finite".into());
        }
        let o = &self.optimizer;
        if o.epochs == 0 || o.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(o.learning_rate > 0.0) || !(o.clip_norm >= 0.0) {
            return bad("learning_rate must be positive and clip_norm non-negative".into());
        }
        if !(self.x0_clip >= 0.0) {
            return bad(format!("x0_clip {} must be non-negative", self.x0_clip));
        }
        if self.steps == 0 {
            return bad("T must be at least 1".into());
        }
        if !(self.segment_s > 0.0) || self.fs == 0 {
            return bad("segment_s and fs must be positive".into());
        }
        self.model.validate()?;
        if self.model.segment_len != self.segment_len() {
            return bad(format!(
                "model.segment_len {} does not match segment_s * fs = {}",
                self.model.segment_len,
                self.segment_len()
            ));
        }
        let c = &self.corpus;
        if c.semg_sources == 0 || c.ecg_sources == 0 || !(c.semg_source_s > 0.0 && c.ecg_source_s > 0.0) {
            return bad("corpus needs at least one source of each kind with positive duration".into());
        }
        if !(c.ecg_rate_bpm.0 > 0.0 && c.ecg_rate_bpm.0 <= c.ecg_rate_bpm.1) {
            return bad(format!("invalid ECG rate range {:?}", c.ecg_rate_bpm));
        }
        let s = &self.split;
        if s.train_contaminations == 0 || s.eval_contaminations == 0 {
            return bad("contaminations per segment must be at least 1".into());
        }
        if s.train_sources == 0 || s.val_sources == 0 || s.test_sources == 0 {
            return bad("every split needs at least one clean source".into());
        }
        if s.train_ecg == 0 || s.val_ecg == 0 || s.test_ecg == 0 {
            return bad("every split needs at least one ECG source".into());
        }
        Ok(())
    }

    pub fn segment_len(&self) -> usize {
        (self.segment_s * self.fs as f64).round() as usize
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        cosine_schedule(self.steps, self.sched_s, DEFAULT_BETA_CLIP)
    }

    pub fn work_dir(&self) -> PathBuf {
        self.paths
            .work_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.profile.to_string()))
    }

    fn under(&self, p: &Option<PathBuf>, rel: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.work_dir().join(rel))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.under(&self.paths.corpus_dir, "corpus")
    }
    pub fn train_dir(&self) -> PathBuf {
        self.under(&self.paths.train_dir, "data/train")
    }
    pub fn val_dir(&self) -> PathBuf {
        self.under(&self.paths.val_dir, "data/val")
    }
    pub fn test_dir(&self) -> PathBuf {
        self.under(&self.paths.test_dir, "data/test")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.under(&self.paths.checkpoint, "model.sdck")
    }
    pub fn report(&self) -> PathBuf {
        self.under(&self.paths.report, "train_log.csv")
    }
    pub fn denoised_dir(&self) -> PathBuf {
        self.under(&self.paths.denoised_dir, "denoised")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.under(&self.paths.eval_dir, "eval")
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
