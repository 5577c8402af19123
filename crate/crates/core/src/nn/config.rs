use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the ε-prediction network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreNetConfig {
    pub segment_len: usize,
    /// Width of both streams; must be even.
    pub base_channels: usize,
    /// HNF blocks per stream.
    pub n_blocks: usize,
    /// Odd kernel sizes of the parallel convolutions in each block.
    pub kernel_sizes: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            segment_len: 5000,
            base_channels: 128,
            n_blocks: 4,
            kernel_sizes: vec![3, 5, 9],
            embed_dim: 128,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 {
            return Err(Error::Config("segment_len must be positive".into()));
        }
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return Err(Error::Config(format!(
                "base_channels {} must be even and at least 2",
                self.base_channels
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be at least 1".into()));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!(
                "kernel sizes {:?} must be a non-empty list of odd integers",
                self.kernel_sizes
            )));
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be even and at least 2",
                self.embed_dim
            )));
        }
        Ok(())
    }

    /// `key = value` lines, sorted by key.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let ks: Vec<String> = self.kernel_sizes.iter().map(usize::to_string).collect();
        BTreeMap::from([
            ("segment_len".into(), self.segment_len.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("n_blocks".into(), self.n_blocks.to_string()),
            ("kernel_sizes".into(), ks.join(",")),
            ("embed_dim".into(), self.embed_dim.to_string()),
        ])
    }

    pub fn from_key_values(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("config key {k} missing")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("config key {k} is not an integer")))
        };
        let kernel_sizes = get("kernel_sizes")?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad kernel size {s:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let cfg = Self {
            segment_len: num("segment_len")?,
            base_channels: num("base_channels")?,
            n_blocks: num("n_blocks")?,
            kernel_sizes,
            embed_dim: num("embed_dim")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
