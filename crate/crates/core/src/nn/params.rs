//! Parameter layout and storage.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ScoreNetConfig;
use super::ops::Scalar;
use crate::error::{Error, Result};

/// Location of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub off: usize,
    pub len: usize,
}

impl Slot {
    #[inline]
    pub fn of<'a, S>(&self, v: &'a [S]) -> &'a [S] {
        &v[self.off..self.off + self.len]
    }

    #[inline]
    pub fn of_mut<'a, S>(&self, v: &'a mut [S]) -> &'a mut [S] {
        &mut v[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Uniform(f64),
    Zero,
    One,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) slot: Slot,
    pub(crate) init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSlot {
    pub w: Slot,
    pub b: Slot,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearSlot {
    pub w: Slot,
    pub b: Slot,
    pub dout: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct HnfSlot {
    pub convs: Vec<ConvSlot>,
    pub proj: ConvSlot,
    pub gamma: Slot,
    pub beta: Slot,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BridgeSlot {
    pub film: LinearSlot,
    pub inject: ConvSlot,
}

/// Where every layer lives in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub(crate) config: ScoreNetConfig,
    pub(crate) tensors: Vec<TensorInfo>,
    pub(crate) size: usize,
    pub(crate) main_in: ConvSlot,
    pub(crate) cond_in: ConvSlot,
    pub(crate) main_blocks: Vec<HnfSlot>,
    pub(crate) cond_blocks: Vec<HnfSlot>,
    pub(crate) bridges: Vec<BridgeSlot>,
    pub(crate) emb1: LinearSlot,
    pub(crate) emb2: LinearSlot,
    pub(crate) out: ConvSlot,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    size: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>, init: Init) -> Slot {
        let len = shape.iter().product();
        let slot = Slot { off: self.size, len };
        self.size += len;
        self.tensors.push(TensorInfo {
            name,
            shape,
            slot,
            init,
        });
        slot
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) -> ConvSlot {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let init = if zero { Init::Zero } else { Init::Uniform(bound) };
        ConvSlot {
            w: self.tensor(format!("{name}.weight"), vec![cout, cin, k], init),
            b: self.tensor(format!("{name}.bias"), vec![cout], init),
            cin,
            cout,
            k,
        }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize, zero: bool) -> LinearSlot {
        let bound = 1.0 / (din as f64).sqrt();
        let init = if zero { Init::Zero } else { Init::Uniform(bound) };
        LinearSlot {
            w: self.tensor(format!("{name}.weight"), vec![dout, din], init),
            b: self.tensor(format!("{name}.bias"), vec![dout], init),
            dout,
        }
    }

    fn hnf(&mut self, name: &str, c: usize, kernels: &[usize]) -> HnfSlot {
        let convs = kernels
            .iter()
            .map(|&k| self.conv(&format!("{name}.conv_k{k}"), c, c, k, false))
            .collect();
        let proj = self.conv(&format!("{name}.proj"), kernels.len() * c, c, 1, false);
        let half = c / 2;
        HnfSlot {
            convs,
            proj,
            gamma: self.tensor(format!("{name}.norm.gamma"), vec![half], Init::One),
            beta: self.tensor(format!("{name}.norm.beta"), vec![half], Init::Zero),
            channels: c,
        }
    }
}

impl Architecture {
    pub fn new(config: &ScoreNetConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let e = config.embed_dim;
        let mut b = Builder {
            tensors: Vec::new(),
            size: 0,
        };
        let emb1 = b.linear("embed.fc1", e, e, false);
        let emb2 = b.linear("embed.fc2", e, e, false);
        let main_in = b.conv("main.input", 1, c, 3, false);
        let cond_in = b.conv("cond.input", 1, c, 3, false);
        let mut main_blocks = Vec::new();
        let mut cond_blocks = Vec::new();
        let mut bridges = Vec::new();
        for i in 0..config.n_blocks {
            main_blocks.push(b.hnf(&format!("main.block{i}"), c, &config.kernel_sizes));
            cond_blocks.push(b.hnf(&format!("cond.block{i}"), c, &config.kernel_sizes));
            bridges.push(BridgeSlot {
                film: b.linear(&format!("bridge{i}.film"), e + c, 2 * c, true),
                inject: b.conv(&format!("bridge{i}.inject"), c, c, 3, true),
            });
        }
        let out = b.conv("main.output", c, 1, 3, false);
        Ok(Self {
            config: config.clone(),
            tensors: b.tensors,
            size: b.size,
            main_in,
            cond_in,
            main_blocks,
            cond_blocks,
            bridges,
            emb1,
            emb2,
            out,
        })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.size
    }
}

/// Learned parameters of the network, one flat vector keyed by [`Architecture`].
#[derive(Debug, Clone)]
pub struct ScoreNetParams<S> {
    pub(crate) arch: Arc<Architecture>,
    pub(crate) values: Vec<S>,
}

impl<S: Scalar> ScoreNetParams<S> {
    /// Default initialization: uniform fan-in scaled weights, identity FiLM
    /// bridges with zero injection, unit normalization gains.
    pub fn init(config: &ScoreNetConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![S::zero(); arch.size];
        for t in &arch.tensors {
            let dst = t.slot.of_mut(&mut values);
            match t.init {
                Init::Zero => dst.fill(S::zero()),
                Init::One => dst.fill(S::one()),
                Init::Uniform(bound) => dst
                    .iter_mut()
                    .for_each(|v| *v = S::of(rng.gen_range(-bound..bound))),
            }
        }
        Ok(Self {
            arch: Arc::new(arch),
            values,
        })
    }

    pub(crate) fn from_parts(arch: Arc<Architecture>, values: Vec<S>) -> Result<Self> {
        if values.len() != arch.size {
            return Err(Error::Contract(format!(
                "{} parameter values for an architecture of {}",
                values.len(),
                arch.size
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter value".into()));
        }
        Ok(Self { arch, values })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.arch
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.slot.of(&self.values))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let slot = self.arch.tensors.iter().find(|t| t.name == name)?.slot;
        Some(slot.of_mut(&mut self.values))
    }

    /// Adds Gaussian noise of standard deviation `std` to every parameter,
    /// including the zero-initialized bridge weights.
    pub fn perturb(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut self.values {
            let n: f64 = rng.sample(StandardNormal);
            *v += S::of(std * n);
        }
    }

    /// Precision conversion with the same architecture.
    pub fn cast<T: Scalar>(&self) -> ScoreNetParams<T> {
        ScoreNetParams {
            arch: self.arch.clone(),
            values: self.values.iter().map(|v| T::of(v.f64())).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<S> {
        vec![S::zero(); self.values.len()]
    }
}
