//! PNG output for previews and heat maps, and 16-bit RGB LDR frames with
//! left-aligned codes.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::raw::max_code;

const FORMAT: &str = "PNG";

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::decode(FORMAT, path, other.to_string()),
        })
}

fn interleave<T: Copy>(img: &Image, f: impl Fn(f32) -> T) -> Vec<T> {
    let n = img.pixels();
    let mut out = Vec::with_capacity(img.data.len());
    for i in 0..n {
        for c in 0..img.channels {
            out.push(f(img.data[c * n + i]));
        }
    }
    out
}

/// 8-bit gray or RGB; values are clipped to [0, 1] and rounded.
pub fn write_png8(path: &Path, img: &Image) -> Result<()> {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, interleave(img, q)).unwrap()),
        3 => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleave(img, q)).unwrap()),
        c => {
            return Err(Error::DimensionMismatch(format!(
                "PNG preview needs 1 or 3 channels, got {c}"
            )))
        }
    };
    save(path, dynamic)
}

/// 16-bit RGB holding `bit_depth`-bit codes `round(v * (2^bits - 1))`, left-aligned.
pub fn write_png16(path: &Path, img: &Image, bit_depth: u32) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::DimensionMismatch(format!(
            "LDR PNG needs 3 channels, got {}",
            img.channels
        )));
    }
    if !(1..=16).contains(&bit_depth) {
        return Err(invalid(format!("bit depth {bit_depth} out of range 1..=16")));
    }
    let max = max_code(bit_depth) as f32;
    let s = 16 - bit_depth;
    let q = |v: f32| (((v.clamp(0.0, 1.0) * max) + 0.5).floor() as u16) << s;
    let buf = ImageBuffer::<Rgb<u16>, _>::from_raw(img.width as u32, img.height as u32, interleave(img, q)).unwrap();
    save(path, DynamicImage::ImageRgb16(buf))
}

/// Inverse of [`write_png16`]; 8-bit files are rejected.
pub fn read_png16(path: &Path, bit_depth: u32) -> Result<Image> {
    if !(1..=16).contains(&bit_depth) {
        return Err(invalid(format!("bit depth {bit_depth} out of range 1..=16")));
    }
    let dynamic = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::decode(FORMAT, path, other.to_string()),
    })?;
    let buf = match dynamic {
        DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(Error::decode(
                FORMAT,
                path,
                format!("expected 16-bit RGB, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let n = w * h;
    let s = 16 - bit_depth;
    let max = max_code(bit_depth) as f32;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in buf.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = f32::from(px.0[c] >> s) / max;
        }
    }
    Image::from_vec(w, h, 3, data)
}
