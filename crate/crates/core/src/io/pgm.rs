//! 16-bit binary PGM mosaics. Samples are big-endian with the code
//! left-aligned, so a 10-bit code `k` is stored as `k << 6`.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{read_json, sidecar_path, write_bytes, write_json};
use crate::error::{invalid, Error, Result};
use crate::raw::{BayerFrame, BayerPattern, WbGains};

const FORMAT: &str = "PGM";

/// Capture metadata stored next to a raw mosaic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub exposure_time: f64,
    #[serde(default = "unit_gain")]
    pub analog_gain: f64,
    pub wb_gains: WbGains,
    pub black_level: u16,
    pub white_level: u16,
    pub bit_depth: u32,
    pub pattern: BayerPattern,
}

fn unit_gain() -> f64 {
    1.0
}

fn shift(bit_depth: u32) -> Result<u32> {
    if (1..=16).contains(&bit_depth) {
        Ok(16 - bit_depth)
    } else {
        Err(invalid(format!("bit depth {bit_depth} out of range 1..=16")))
    }
}

pub fn encode_pgm16(width: usize, height: usize, codes: &[u16], bit_depth: u32) -> Result<Vec<u8>> {
    if codes.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} PGM needs {} samples, got {}",
            width * height,
            codes.len()
        )));
    }
    let s = shift(bit_depth)?;
    let header = format!("P5\n{width} {height}\n65535\n");
    let mut out = Vec::with_capacity(header.len() + 2 * codes.len());
    out.extend_from_slice(header.as_bytes());
    for (i, &k) in codes.iter().enumerate() {
        if s > 0 && k >> (16 - s) != 0 {
            return Err(Error::SampleOutOfRange {
                index: i,
                value: k,
                bit_depth,
            });
        }
        out.extend_from_slice(&(k << s).to_be_bytes());
    }
    Ok(out)
}

/// Returns `(width, height, codes)` with codes right-aligned to `bit_depth`.
pub fn decode_pgm16(bytes: &[u8], bit_depth: u32, path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bad = |reason: String| Error::decode(FORMAT, path, reason);
    let s = shift(bit_depth)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(bad(format!("expected binary PGM (P5), found {magic:?}")));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 65535 {
        return Err(bad(format!("maxval must be 65535, found {maxval}")));
    }
    if pos >= bytes.len() {
        return Err(bad("truncated header".into()));
    }
    pos += 1;
    let need = 2 * width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(format!(
            "truncated payload: need {need} bytes, found {}",
            payload.len()
        )));
    }
    let low_mask = (1u32 << s) - 1;
    let mut codes = Vec::with_capacity(width * height);
    for (i, b) in payload[..need].chunks_exact(2).enumerate() {
        let v = u16::from_be_bytes([b[0], b[1]]);
        if u32::from(v) & low_mask != 0 {
            return Err(bad(format!("sample {i} ({v}) is not left-aligned to {bit_depth} bits")));
        }
        codes.push(v >> s);
    }
    Ok((width, height, codes))
}

/// Write the mosaic and its sidecar.
pub fn write_raw_frame(path: &Path, frame: &BayerFrame) -> Result<()> {
    frame.validate()?;
    write_bytes(
        path,
        &encode_pgm16(frame.width, frame.height, &frame.data, frame.bit_depth)?,
    )?;
    let side = RawSidecar {
        exposure_time: frame.exposure_time,
        analog_gain: frame.analog_gain,
        wb_gains: frame.wb_gains,
        black_level: frame.black_level,
        white_level: frame.white_level,
        bit_depth: frame.bit_depth,
        pattern: frame.pattern,
    };
    write_json(&sidecar_path(path), &side)
}

/// Read a mosaic; metadata comes from the sidecar next to it.
pub fn read_raw_frame(path: &Path) -> Result<BayerFrame> {
    let side: RawSidecar = read_json(&sidecar_path(path))?;
    read_raw_with(path, &side)
}

pub(crate) fn read_raw_with(path: &Path, side: &RawSidecar) -> Result<BayerFrame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, data) = decode_pgm16(&bytes, side.bit_depth, path)?;
    let frame = BayerFrame {
        width,
        height,
        pattern: side.pattern,
        bit_depth: side.bit_depth,
        black_level: side.black_level,
        white_level: side.white_level,
        data,
        exposure_time: side.exposure_time,
        analog_gain: side.analog_gain,
        wb_gains: side.wb_gains,
    };
    frame.validate()?;
    Ok(frame)
}
