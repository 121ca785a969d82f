//! Portable float map: `Pf` (one channel) or `PF` (three channels, interleaved),
//! rows stored bottom to top, byte order given by the sign of the scale.

use std::path::Path;

use crate::align::FlowField;
use crate::error::{Error, Result};
use crate::image::{Image, Plane};

const FORMAT: &str = "PFM";

/// Encode as little-endian (scale −1). Only 1 and 3 channels are representable.
pub fn encode_pfm(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::DimensionMismatch(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let header = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height);
    let n = img.pixels();
    let mut out = Vec::with_capacity(header.len() + 4 * img.data.len());
    out.extend_from_slice(header.as_bytes());
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.extend_from_slice(&img.data[c * n + y * img.width + x].to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decode either byte order; `path` only labels errors.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |reason: String| Error::decode(FORMAT, path, reason);
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(t)
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(bad(format!("unknown magic {m:?}"))),
    };
    let dim = |t: String, what: &str| -> Result<usize> {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid {what} {t:?}")))
    };
    let width = dim(token()?, "width")?;
    let height = dim(token()?, "height")?;
    let st = token()?;
    let scale: f32 = st
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| bad(format!("invalid scale {st:?}")))?;
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header".into()));
    }
    pos += 1;
    let n = width * height;
    let need = 4 * channels * n;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(bad(format!(
            "truncated payload: need {need} bytes, found {}",
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; channels * n];
    for (k, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (c, p) = (k % channels, k / channels);
        let (x, row) = (p % width, p / width);
        data[c * n + (height - 1 - row) * width + x] = v;
    }
    Image::from_vec(width, height, channels, data)
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    super::write_bytes(path, &encode_pfm(img)?)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// Planes stacked top to bottom into a single-channel image.
pub fn stack_planes(img: &Image) -> Image {
    Image {
        width: img.width,
        height: img.height * img.channels,
        channels: 1,
        data: img.data.clone(),
    }
}

/// Inverse of [`stack_planes`].
pub fn unstack_planes(stacked: &Image, planes: usize) -> Result<Image> {
    if stacked.channels != 1 || planes == 0 || !stacked.height.is_multiple_of(planes) {
        return Err(Error::DimensionMismatch(format!(
            "cannot split a {}-channel image of height {} into {planes} planes",
            stacked.channels, stacked.height
        )));
    }
    Image::from_vec(stacked.width, stacked.height / planes, planes, stacked.data.clone())
}

/// Flow as a three-channel map (dx, dy, 0).
pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let zero = Plane::new(flow.width(), flow.dx.height);
    let img = Image::from_planes(&[flow.dx.clone(), flow.dy.clone(), zero])?;
    write_pfm(path, &img)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let img = read_pfm(path)?;
    if img.channels != 3 {
        return Err(Error::decode(FORMAT, path, "flow files have three channels"));
    }
    Ok(FlowField {
        dx: img.plane(0),
        dy: img.plane(1),
    })
}
