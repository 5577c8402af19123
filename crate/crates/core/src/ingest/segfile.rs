//! Canonical raw-segment container.
//!
//! Layout, all little-endian: magic `SEG1`, `u32` fs, `u32` segment count,
//! then per segment a `u32` length followed by that many `f32` samples.
//! Samples are stored in single precision, so a write/read round trip is
//! exact only for values representable as `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::waveform::Waveform;

pub const SEGMENT_MAGIC: &[u8; 4] = b"SEG1";

pub fn encode_segments(fs: u32, segments: &[Waveform]) -> Result<Vec<u8>> {
    let total: usize = segments.iter().map(Waveform::len).sum();
    let mut buf = Vec::with_capacity(12 + 4 * segments.len() + 4 * total);
    buf.extend_from_slice(SEGMENT_MAGIC);
    buf.extend_from_slice(&fs.to_le_bytes());
    buf.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    for (i, seg) in segments.iter().enumerate() {
        if seg.fs() != fs {
            return Err(Error::Contract(format!(
                "segment {i} has fs {} but the file declares {fs}",
                seg.fs()
            )));
        }
        buf.extend_from_slice(&(seg.len() as u32).to_le_bytes());
        for &v in seg.samples() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::Truncated(format!(
                "{what}: need {n} bytes at offset {pos}, file has {}",
                bytes.len()
            ))
        })?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

fn read_u32(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    let b = take(bytes, pos, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decodes a container; segment labels are `"{label_prefix}{index}"`.
pub fn decode_segments(bytes: &[u8], label_prefix: &str) -> Result<(u32, Vec<Waveform>)> {
    if bytes.len() < 4 || &bytes[..4] != SEGMENT_MAGIC {
        return Err(Error::Format("missing SEG1 magic".into()));
    }
    let mut pos = 4;
    let fs = read_u32(bytes, &mut pos, "header")?;
    let count = read_u32(bytes, &mut pos, "header")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = read_u32(bytes, &mut pos, "segment length")? as usize;
        let payload = take(bytes, &mut pos, len * 4, &format!("segment {i}"))?;
        let samples = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(Waveform::new(samples, fs, format!("{label_prefix}{i}"))?);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} segments",
            bytes.len() - pos
        )));
    }
    Ok((fs, out))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_segments(path: impl AsRef<Path>, fs: u32, segments: &[Waveform]) -> Result<()> {
    let path = path.as_ref();
    let buf = encode_segments(fs, segments)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<Waveform>> {
    read_segments_with_fs(path).map(|(_, s)| s)
}

/// Like [`read_segments`] but also returns the header rate, which is the only
/// record of fs when the file holds no segments.
pub fn read_segments_with_fs(path: impl AsRef<Path>) -> Result<(u32, Vec<Waveform>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_segments(&bytes, &format!("{stem}#"))
}
