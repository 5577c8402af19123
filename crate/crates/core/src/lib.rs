//! Removal of ECG interference from single-channel surface EMG with a
//! conditional denoising diffusion model.
//!
//! The crate is organised bottom-up: [`ingest`] reads recordings and
//! synthesizes surrogates, [`preprocess`] filters, resamples and mixes at an
//! exact SNR, [`schedules`] and [`diffusion`] hold the noise schedule, the
//! ε-matching objective and the ancestral sampler, [`nn`] is the two-stream
//! ε-prediction network, [`baselines`] the high-pass and template-subtraction
//! references, [`metrics`] the evaluation criteria and [`harness`] the batch
//! pipeline behind the command-line tool.

pub mod baselines;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod schedules;
mod waveform;

pub use error::{Error, Result};
pub use waveform::Waveform;
