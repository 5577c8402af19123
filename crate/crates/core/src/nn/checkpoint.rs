//! Versioned checkpoint container.
//!
//! Layout, little-endian: magic `SDCK`, `u32` version, `u32` config length and
//! that many bytes of `key = value` text, `u32` tensor count, then per tensor
//! `u32` name length, name bytes, `u32` rank, rank × `u32` dims, and
//! `f32` payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use super::config::ScoreNetConfig;
use super::params::{Architecture, ScoreNetParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn encode(params: &ScoreNetParams<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + 4 * params.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let cfg: String = params
        .config()
        .to_key_values()
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    put_u32(&mut buf, cfg.len() as u32);
    buf.extend_from_slice(cfg.as_bytes());
    let tensors = params.architecture().tensors();
    put_u32(&mut buf, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut buf, t.name.len() as u32);
        buf.extend_from_slice(t.name.as_bytes());
        put_u32(&mut buf, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut buf, d as u32);
        }
        for v in t.slot.of(params.values()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!("checkpoint ends before offset {}", self.pos + n))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?)
            .map_err(|_| Error::Format("checkpoint text is not UTF-8".into()))
    }
}

fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("bad config line {l:?}")))
        })
        .collect()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ScoreNetParams<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("not a checkpoint".into()))? != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing SDCK magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config = ScoreNetConfig::from_key_values(&parse_key_values(r.text(cfg_len)?)?)?;
    let arch = Architecture::new(&config)?;
    let count = r.u32()? as usize;
    if count != arch.tensors().len() {
        return Err(Error::Incompatible(format!(
            "{count} tensors stored, architecture has {}",
            arch.tensors().len()
        )));
    }
    let mut values = vec![0f32; arch.param_count()];
    for t in arch.tensors() {
        let name_len = r.u32()? as usize;
        let name = r.text(name_len)?;
        if name != t.name {
            return Err(Error::Incompatible(format!(
                "expected tensor {}, found {name}",
                t.name
            )));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != t.shape {
            return Err(Error::Incompatible(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        let payload = r.take(4 * t.slot.len)?;
        for (dst, c) in t.slot.of_mut(&mut values).iter_mut().zip(payload.chunks_exact(4)) {
            *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    ScoreNetParams::from_parts(Arc::new(arch), values)
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_checkpoint(params: &ScoreNetParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let bytes = encode(params);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ScoreNetParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
