//! Reader for single-segment WFDB records stored in format 212.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::waveform::Waveform;

/// A multi-channel record converted to physical units.
#[derive(Debug, Clone)]
pub struct WfdbRecord {
    pub record_name: String,
    pub channels: Vec<Waveform>,
    pub gains: Vec<f64>,
    pub baselines: Vec<i32>,
}

impl WfdbRecord {
    pub fn fs(&self) -> u32 {
        self.channels.first().map_or(0, Waveform::fs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ChannelSpec {
    pub file: String,
    pub format: u32,
    pub gain: f64,
    pub baseline: i32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Header {
    pub name: String,
    pub fs: u32,
    pub n_samples: usize,
    pub channels: Vec<ChannelSpec>,
}

const DEFAULT_GAIN: f64 = 200.0;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Parses header text. Comment lines start with `#`.
pub(crate) fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let record_line = lines.next().ok_or_else(|| parse_err("empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(parse_err(format!(
            "record line needs `name nchan fs nsamples`, got {record_line:?}"
        )));
    }
    let name = fields[0].to_string();
    if name.contains('/') {
        return Err(Error::UnsupportedFormat(format!(
            "multi-segment record {name}"
        )));
    }
    let n_chan: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(format!("bad channel count {:?}", fields[1])))?;
    // fs may carry a counter frequency suffix: `360/2(0)`
    let fs_text = fields[2].split(['/', '(']).next().unwrap_or("");
    let fs_value: f64 = fs_text
        .parse()
        .map_err(|_| parse_err(format!("bad sampling frequency {:?}", fields[2])))?;
    if fs_value <= 0.0 || fs_value.fract() != 0.0 {
        return Err(Error::UnsupportedFormat(format!(
            "non-integer sampling frequency {fs_value}"
        )));
    }
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| parse_err(format!("bad sample count {:?}", fields[3])))?;

    let mut channels = Vec::with_capacity(n_chan);
    for _ in 0..n_chan {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(format!("header declares {n_chan} channels")))?;
        channels.push(parse_channel(line)?);
    }
    Ok(Header {
        name,
        fs: fs_value as u32,
        n_samples,
        channels,
    })
}

fn parse_channel(line: &str) -> Result<ChannelSpec> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(parse_err(format!("signal line too short: {line:?}")));
    }
    let file = fields[0].to_string();
    let format: u32 = fields[1]
        .parse()
        .map_err(|_| Error::UnsupportedFormat(format!("format code {:?}", fields[1])))?;

    // `gain(baseline)/units`; baseline defaults to the ADC zero field.
    let adc_zero: i32 = fields
        .get(4)
        .and_then(|f| f.parse().ok())
        .unwrap_or(0);
    let (gain, baseline) = match fields.get(2) {
        None => (DEFAULT_GAIN, adc_zero),
        Some(g) => {
            let g = g.split('/').next().unwrap_or("");
            let (gain_txt, base) = match g.split_once('(') {
                Some((gain_txt, rest)) => {
                    let b = rest
                        .trim_end_matches(')')
                        .parse::<i32>()
                        .map_err(|_| parse_err(format!("bad baseline in {g:?}")))?;
                    (gain_txt, b)
                }
                None => (g, adc_zero),
            };
            let gain: f64 = gain_txt
                .parse()
                .map_err(|_| parse_err(format!("bad gain {gain_txt:?}")))?;
            (if gain == 0.0 { DEFAULT_GAIN } else { gain }, base)
        }
    };
    let description = fields.get(8..).map(|d| d.join(" ")).unwrap_or_default();
    Ok(ChannelSpec {
        file,
        format,
        gain,
        baseline,
        description,
    })
}

/// Decodes format-212 bytes into `count` sign-extended 12-bit values.
///
/// Each 3-byte group carries two samples: the first is byte 0 plus the low
/// nibble of byte 1 as its high bits; the second is byte 2 plus the high
/// nibble of byte 1.
pub fn decode_212(bytes: &[u8], count: usize) -> Result<Vec<i16>> {
    let needed = count.div_ceil(2) * 3;
    // A trailing odd sample may be stored in a 2-byte group.
    let needed_min = (count / 2) * 3 + if count % 2 == 1 { 2 } else { 0 };
    if bytes.len() < needed_min {
        return Err(Error::Truncated(format!(
            "format 212 needs {needed} bytes for {count} samples, have {}",
            bytes.len()
        )));
    }
    let sign_extend = |v: u16| -> i16 { ((v << 4) as i16) >> 4 };
    let mut out = Vec::with_capacity(count);
    for group in bytes.chunks(3) {
        if out.len() >= count {
            break;
        }
        let b0 = group[0] as u16;
        let b1 = *group.get(1).unwrap_or(&0) as u16;
        out.push(sign_extend(b0 | ((b1 & 0x0f) << 8)));
        if out.len() < count {
            let b2 = group[2] as u16;
            out.push(sign_extend(b2 | ((b1 & 0xf0) << 4)));
        }
    }
    Ok(out)
}

/// Reads a record given the path of its `.hea` file.
pub fn read_wfdb(header_path: impl AsRef<Path>) -> Result<WfdbRecord> {
    let header_path = header_path.as_ref();
    let text =
        fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_header(&text)?;
    if header.channels.is_empty() {
        return Err(parse_err("record has no signals"));
    }
    for ch in &header.channels {
        if ch.format != 212 {
            return Err(Error::UnsupportedFormat(format!(
                "signal format {} (only 212 is supported)",
                ch.format
            )));
        }
        if ch.file != header.channels[0].file {
            return Err(Error::UnsupportedFormat(
                "signals split across several data files".into(),
            ));
        }
    }
    let dat_path: PathBuf = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.channels[0].file);
    let bytes = fs::read(&dat_path).map_err(|e| Error::io(&dat_path, e))?;

    let n_chan = header.channels.len();
    let raw = decode_212(&bytes, n_chan * header.n_samples).map_err(|e| {
        Error::io(
            &dat_path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, e.to_string()),
        )
    })?;

    let mut channels = Vec::with_capacity(n_chan);
    for (c, spec) in header.channels.iter().enumerate() {
        let samples: Vec<f64> = raw
            .iter()
            .skip(c)
            .step_by(n_chan)
            .map(|&adc| (adc as i32 - spec.baseline) as f64 / spec.gain)
            .collect();
        let label = if spec.description.is_empty() {
            format!("{}:{}", header.name, c)
        } else {
            format!("{}:{}", header.name, spec.description)
        };
        channels.push(Waveform::new(samples, header.fs, label)?);
    }
    Ok(WfdbRecord {
        record_name: header.name,
        gains: header.channels.iter().map(|c| c.gain).collect(),
        baselines: header.channels.iter().map(|c| c.baseline).collect(),
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nsrd_style_header() {
        let h = parse_header(
            "16265 2 128 11730944\n16265.dat 212 200 12 0 -53 -1431 0 ECG1\n16265.dat 212 200 12 0 -51 -6052 0 ECG2\n# comment\n",
        )
        .unwrap();
        assert_eq!(h.fs, 128);
        assert_eq!(h.n_samples, 11730944);
        assert_eq!(h.channels.len(), 2);
        assert_eq!(h.channels[1].gain, 200.0);
        assert_eq!(h.channels[1].baseline, 0);
        assert_eq!(h.channels[1].description, "ECG2");
    }

    #[test]
    fn parses_gain_with_baseline() {
        let h = parse_header("r 1 360\nr.dat 212 200(1024)/mV 11 1024 995\n");
        assert!(h.is_err(), "missing sample count must fail");
        let h = parse_header("r 1 360/2(0) 10\nr.dat 212 100(7)/mV 11 1024 995\n").unwrap();
        assert_eq!(h.fs, 360);
        assert_eq!(h.channels[0].gain, 100.0);
        assert_eq!(h.channels[0].baseline, 7);
    }

    #[test]
    fn zero_gain_means_default() {
        let h = parse_header("r 1 128 4\nr.dat 212 0 12 5\n").unwrap();
        assert_eq!(h.channels[0].gain, DEFAULT_GAIN);
        assert_eq!(h.channels[0].baseline, 5);
    }

    #[test]
    fn decodes_documented_triplet() {
        let v = decode_212(&[0x10, 0x20, 0x03], 2).unwrap();
        assert_eq!(v, vec![0x010, 0x203]);
    }

    #[test]
    fn sign_extension() {
        // 0xFFF -> -1, 0x800 -> -2048
        let v = decode_212(&[0xff, 0x8f, 0x00], 2).unwrap();
        assert_eq!(v, vec![-1, -2048]);
    }

    #[test]
    fn truncated_input_is_rejected() {
        assert!(matches!(
            decode_212(&[0x00, 0x00, 0x00, 0x01], 4),
            Err(Error::Truncated(_))
        ));
        // odd count, 2-byte tail group
        assert_eq!(decode_212(&[1, 0, 2, 3, 0], 3).unwrap(), vec![1, 2, 3]);
    }
}
