//! Surrogate source corpus.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::Manifest;
use super::seeds::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{gen_surrogate, write_segments, SurrogateSpec};

pub const SEMG_SOURCES_FILE: &str = "semg_sources.seg";
pub const ECG_SOURCES_FILE: &str = "ecg_sources.seg";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub semg_count: usize,
    pub ecg_count: usize,
    pub semg_path: PathBuf,
    pub ecg_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Writes surrogate sEMG and ECG sources plus a manifest of their seeds.
pub fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let c = &cfg.corpus;

    let semg_specs: Vec<SurrogateSpec> = (0..c.semg_sources)
        .map(|i| {
            SurrogateSpec::semg(c.semg_source_s, c.semg_fs, derive_seed(cfg.seed, &format!("semg/{i}")))
        })
        .collect();
    let ecg_specs: Vec<SurrogateSpec> = (0..c.ecg_sources)
        .map(|i| {
            let seed = derive_seed(cfg.seed, &format!("ecg/{i}"));
            let rate = ChaCha8Rng::seed_from_u64(seed).gen_range(c.ecg_rate_bpm.0..=c.ecg_rate_bpm.1);
            SurrogateSpec::ecg(c.ecg_source_s, c.ecg_fs, seed, rate)
        })
        .collect();

    let semg = semg_specs.par_iter().map(gen_surrogate).collect::<Result<Vec<_>>>()?;
    let ecg = ecg_specs.par_iter().map(gen_surrogate).collect::<Result<Vec<_>>>()?;

    let semg_path = out_dir.join(SEMG_SOURCES_FILE);
    let ecg_path = out_dir.join(ECG_SOURCES_FILE);
    write_segments(&semg_path, c.semg_fs, &semg)?;
    write_segments(&ecg_path, c.ecg_fs, &ecg)?;

    let mut m = Manifest::new();
    m.set("kind", "surrogate");
    m.set("seed", cfg.seed);
    m.set("semg.count", semg.len());
    m.set("semg.fs", c.semg_fs);
    m.set("semg.duration_s", c.semg_source_s);
    m.set("ecg.count", ecg.len());
    m.set("ecg.fs", c.ecg_fs);
    m.set("ecg.duration_s", c.ecg_source_s);
    for (i, s) in semg_specs.iter().enumerate() {
        m.set(format!("semg.{i:05}.seed"), s.seed);
    }
    for (i, s) in ecg_specs.iter().enumerate() {
        m.set(format!("ecg.{i:05}.seed"), s.seed);
        m.set(format!("ecg.{i:05}.rate_bpm"), s.ecg_rate_bpm);
    }
    // the manifest goes last so its presence implies complete data files
    let manifest_path = out_dir.join(MANIFEST_FILE);
    m.write(&manifest_path)?;
    Ok(SynthSummary {
        semg_count: semg.len(),
        ecg_count: ecg.len(),
        semg_path,
        ecg_path,
        manifest_path,
    })
}
