//! Batch pipeline behind the command-line tool: synthesize sources, prepare
//! paired splits, train, denoise, evaluate and report.

mod config;
mod denoise;
mod evaluate;
mod manifest;
mod prepare;
mod seeds;
mod synth;
mod train;

pub use config::{CorpusConfig, ExperimentConfig, OptimizerConfig, PathsConfig, Profile, SplitConfig};
pub use denoise::{cmd_denoise, sidecar_path, DenoiseSummary, Method};
pub use evaluate::{
    aggregate, aggregate_csv, cmd_evaluate, cmd_report, format_report, rows_csv, Aggregate, EvalSummary,
    ResultRow, AGGREGATE_FILE, REPORT_FILE, ROWS_FILE, ROWS_HEADER,
};
pub use manifest::Manifest;
pub use prepare::{cmd_prepare, segment_id, PairedSplit, PrepareSummary, Split, CLEAN_FILE, ECG_FILE, NOISY_FILE};
pub use seeds::derive_seed;
pub use synth::{cmd_synth, SynthSummary, ECG_SOURCES_FILE, MANIFEST_FILE, SEMG_SOURCES_FILE};
pub use train::{cmd_train, fixed_draw_loss, validation_seed, EpochLog, TrainSummary};

use crate::error::{Error, Result};

/// Environment variable naming the compute device.
pub const DEVICE_ENV: &str = "SDEMG_DEVICE";

/// Resolves the compute device. Only the portable CPU path exists, so any
/// other identifier is rejected rather than silently ignored.
pub fn compute_device() -> Result<String> {
    match std::env::var(DEVICE_ENV) {
        Err(_) => Ok("cpu".into()),
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") => Ok("cpu".into()),
        Ok(v) => Err(Error::Config(format!("{DEVICE_ENV}={v:?}: only \"cpu\" is supported"))),
    }
}
