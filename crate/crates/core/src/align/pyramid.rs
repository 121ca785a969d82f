use crate::error::{invalid, Result};
use crate::image::Plane;

/// 2× box-filter downsample. Odd trailing rows/columns are averaged with
/// the clamped edge.
pub fn downsample(p: &Plane) -> Plane {
    let w = p.width.div_ceil(2);
    let h = p.height.div_ceil(2);
    Plane::from_fn(w, h, |x, y| {
        let (x0, y0) = (2 * x as isize, 2 * y as isize);
        0.25 * (p.get_clamped(x0, y0)
            + p.get_clamped(x0 + 1, y0)
            + p.get_clamped(x0, y0 + 1)
            + p.get_clamped(x0 + 1, y0 + 1))
    })
}

/// Image pyramid, finest level first; each level is a 2× box-filtered
/// downsample of the previous one.
pub fn build_pyramid(img: &Plane, levels: usize) -> Result<Vec<Plane>> {
    if levels == 0 {
        return Err(invalid("pyramid needs at least one level"));
    }
    let min = 1usize << (levels - 1);
    if img.width < min || img.height < min {
        return Err(invalid(format!(
            "{}x{} image is too small for a {levels}-level pyramid (needs {min})",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = downsample(out.last().unwrap());
        out.push(next);
    }
    Ok(out)
}

/// Bilinear 2× upsample onto a `width`×`height` grid with pixel centers
/// aligned to the box downsample (`coarse = (fine + 0.5) / 2 - 0.5`), values
/// multiplied by `gain`.
pub fn upsample(p: &Plane, width: usize, height: usize, gain: f32) -> Plane {
    Plane::from_fn(width, height, |x, y| {
        let u = (x as f32 + 0.5) * 0.5 - 0.5;
        let v = (y as f32 + 0.5) * 0.5 - 0.5;
        gain * p.bilinear(u, v)
    })
}

/// Mirror-pad on the right and bottom so both dimensions are multiples of `m`.
pub fn reflect_pad(p: &Plane, m: usize) -> Plane {
    let w = p.width.div_ceil(m) * m;
    let h = p.height.div_ceil(m) * m;
    if w == p.width && h == p.height {
        return p.clone();
    }
    Plane::from_fn(w, h, |x, y| p.get(reflect(x, p.width), reflect(y, p.height)))
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

pub fn crop(p: &Plane, width: usize, height: usize) -> Plane {
    if p.width == width && p.height == height {
        return p.clone();
    }
    Plane::from_fn(width, height, |x, y| p.get(x, y))
}

/// Validity masks per pyramid level: a coarse pixel is valid only if every
/// fine pixel under it is.
pub fn mask_pyramid(valid: &[bool], width: usize, height: usize, m: usize, levels: usize) -> Result<Vec<Vec<bool>>> {
    let plane = Plane {
        width,
        height,
        data: valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    };
    Ok(build_pyramid(&reflect_pad(&plane, m), levels)?
        .into_iter()
        .map(|p| p.data.iter().map(|&f| f > 0.999).collect())
        .collect())
}
