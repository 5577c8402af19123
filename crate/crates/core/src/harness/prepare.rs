//! Paired train/validation/test datasets from the source corpus.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::{join_list, Manifest};
use super::seeds::derive_seed;
use super::synth::{ECG_SOURCES_FILE, MANIFEST_FILE, SEMG_SOURCES_FILE};
use crate::error::{Error, Result};
use crate::ingest::{read_segments_with_fs, read_wfdb, write_segments};
use crate::preprocess::{condition_ecg, condition_semg, mix_at_snr, normalize_maxabs, segment};
use crate::waveform::Waveform;

pub const CLEAN_FILE: &str = "clean.seg";
pub const NOISY_FILE: &str = "noisy.seg";
pub const ECG_FILE: &str = "ecg.seg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

/// Identifier of the `i`-th pair of a split, shared by every file derived from it.
pub fn segment_id(i: usize) -> String {
    format!("{i:05}")
}

/// A materialized split: aligned clean, interference and noisy segments.
#[derive(Debug, Clone)]
pub struct PairedSplit {
    pub clean: Vec<Waveform>,
    pub ecg: Vec<Waveform>,
    pub noisy: Vec<Waveform>,
    pub manifest: Manifest,
}

impl PairedSplit {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn snr_db(&self, i: usize) -> Result<f64> {
        self.manifest.parse(&format!("pair.{}.snr_db", segment_id(i)))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir.join(MANIFEST_FILE))?;
        let (_, clean) = read_segments_with_fs(dir.join(CLEAN_FILE))?;
        let (_, ecg) = read_segments_with_fs(dir.join(ECG_FILE))?;
        let (_, noisy) = read_segments_with_fs(dir.join(NOISY_FILE))?;
        let count: usize = manifest.parse("count")?;
        if clean.len() != count || ecg.len() != count || noisy.len() != count {
            return Err(Error::Format(format!(
                "{}: manifest lists {count} pairs but files hold {}/{}/{}",
                dir.display(),
                clean.len(),
                ecg.len(),
                noisy.len()
            )));
        }
        Ok(Self {
            clean,
            ecg,
            noisy,
            manifest,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PrepareSummary {
    pub dirs: Vec<(Split, PathBuf)>,
    pub counts: Vec<(Split, usize)>,
}

struct CleanSegment {
    source: usize,
    index: usize,
    wave: Waveform,
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

fn partition(perm: &[usize], sizes: [usize; 3], what: &str) -> Result<[Vec<usize>; 3]> {
    let need: usize = sizes.iter().sum();
    if need > perm.len() {
        return Err(Error::Config(format!(
            "splits need {need} {what} sources but only {} are available",
            perm.len()
        )));
    }
    let (a, rest) = perm.split_at(sizes[0]);
    let (b, rest) = rest.split_at(sizes[1]);
    let mut out = [a.to_vec(), b.to_vec(), rest[..sizes[2]].to_vec()];
    out.iter_mut().for_each(|v| v.sort_unstable());
    Ok(out)
}

fn load_ecg_pool(cfg: &ExperimentConfig) -> Result<Vec<Waveform>> {
    if cfg.ecg_wfdb.is_empty() {
        let (_, ecg) = read_segments_with_fs(cfg.corpus_dir().join(ECG_SOURCES_FILE))?;
        return Ok(ecg);
    }
    cfg.ecg_wfdb
        .iter()
        .map(|p| {
            let rec = read_wfdb(p)?;
            rec.channels
                .into_iter()
                .next()
                .ok_or_else(|| Error::Format(format!("{}: record has no channels", p.display())))
        })
        .collect()
}

/// Conditions every source, cuts clean segments and mixes each with
/// interference drawn from the split's own ECG pool.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let corpus = cfg.corpus_dir();
    Manifest::read(corpus.join(MANIFEST_FILE))?;
    let (_, semg) = read_segments_with_fs(corpus.join(SEMG_SOURCES_FILE))?;
    let ecg_raw = load_ecg_pool(cfg)?;
    let s = &cfg.split;
    let clean_parts = partition(
        &permutation(semg.len(), derive_seed(cfg.seed, "split/semg")),
        [s.train_sources, s.val_sources, s.test_sources],
        "clean",
    )?;
    let ecg_parts = partition(
        &permutation(ecg_raw.len(), derive_seed(cfg.seed, "split/ecg")),
        [s.train_ecg, s.val_ecg, s.test_ecg],
        "ECG",
    )?;

    let seg_len = cfg.segment_len();
    let ecg: Vec<Waveform> = ecg_raw
        .par_iter()
        .map(|w| condition_ecg(w, cfg.fs))
        .collect::<Result<_>>()?;
    if let Some((i, w)) = ecg.iter().enumerate().find(|(_, w)| w.len() < seg_len) {
        return Err(Error::Config(format!(
            "ECG source {i} has {} samples after conditioning, shorter than one segment ({seg_len})",
            w.len()
        )));
    }

    let mut summary = PrepareSummary {
        dirs: Vec::new(),
        counts: Vec::new(),
    };
    for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
        let sources = &clean_parts[k];
        let segments: Vec<CleanSegment> = sources
            .par_iter()
            .map(|&src| -> Result<Vec<CleanSegment>> {
                let cond = condition_semg(&semg[src], cfg.fs)?;
                segment(&cond, cfg.segment_s)?
                    .iter()
                    .enumerate()
                    .map(|(index, w)| {
                        Ok(CleanSegment {
                            source: src,
                            index,
                            wave: normalize_maxabs(w)?.0,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let (grid, reps) = match split {
            Split::Train => (&cfg.snr_grid_train, s.train_contaminations),
            Split::Val => (&cfg.snr_grid_train, s.eval_contaminations),
            Split::Test => (&cfg.snr_grid_test, s.eval_contaminations),
        };
        let dir = match split {
            Split::Train => cfg.train_dir(),
            Split::Val => cfg.val_dir(),
            Split::Test => cfg.test_dir(),
        };
        let count = write_split(cfg, split, &dir, &segments, &ecg, &ecg_parts[k], grid, reps, sources)?;
        summary.dirs.push((split, dir));
        summary.counts.push((split, count));
    }
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn write_split(
    cfg: &ExperimentConfig,
    split: Split,
    dir: &Path,
    segments: &[CleanSegment],
    ecg: &[Waveform],
    ecg_pool: &[usize],
    grid: &[f64],
    reps: usize,
    clean_sources: &[usize],
) -> Result<usize> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seg_len = cfg.segment_len();
    let jobs: Vec<(usize, &CleanSegment)> = segments
        .iter()
        .flat_map(|s| std::iter::repeat(s).take(reps))
        .enumerate()
        .collect();
    let mixed = jobs
        .par_iter()
        .map(|&(i, seg)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("{split}/{}", segment_id(i))));
            let src = ecg_pool[rng.gen_range(0..ecg_pool.len())];
            let offset = rng.gen_range(0..=ecg[src].len() - seg_len);
            let window = ecg[src].with_samples(ecg[src].samples()[offset..offset + seg_len].to_vec())?;
            // cycling through the grid keeps the SNR buckets balanced
            let snr = grid[i % grid.len()];
            let pair = mix_at_snr(&seg.wave, &window, snr)?;
            Ok((i, seg, src, offset, pair))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut m = Manifest::new();
    m.set("split", split);
    m.set("seed", cfg.seed);
    m.set("fs", cfg.fs);
    m.set("segment_len", seg_len);
    m.set("count", mixed.len());
    m.set("clean_sources", join_list(clean_sources));
    m.set("ecg_sources", join_list(ecg_pool));
    m.set("snr_grid", join_list(grid));
    let (mut clean, mut inter, mut noisy) = (Vec::new(), Vec::new(), Vec::new());
    for (i, seg, src, offset, pair) in mixed {
        let id = segment_id(i);
        m.set(format!("pair.{id}.clean_source"), seg.source);
        m.set(format!("pair.{id}.clean_segment"), seg.index);
        m.set(format!("pair.{id}.ecg_source"), src);
        m.set(format!("pair.{id}.ecg_offset"), offset);
        m.set(format!("pair.{id}.snr_db"), pair.target_snr_db);
        m.set(format!("pair.{id}.scale"), pair.scale);
        clean.push(pair.clean);
        inter.push(pair.ecg);
        noisy.push(pair.noisy);
    }
    write_segments(dir.join(CLEAN_FILE), cfg.fs, &clean)?;
    write_segments(dir.join(ECG_FILE), cfg.fs, &inter)?;
    write_segments(dir.join(NOISY_FILE), cfg.fs, &noisy)?;
    m.write(dir.join(MANIFEST_FILE))?;
    Ok(clean.len())
}
