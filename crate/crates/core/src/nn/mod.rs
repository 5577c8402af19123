//! The conditional ε-prediction network.

mod checkpoint;
mod config;
mod model;
pub mod ops;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::ScoreNetConfig;
pub use model::{noise_scale_embedding, CondFeatures, Trace};
pub use ops::Scalar;
pub use optim::{Adam, AdamConfig};
pub use params::{Architecture, ScoreNetParams, TensorInfo};

