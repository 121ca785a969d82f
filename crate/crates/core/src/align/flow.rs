//! Coarse-to-fine block-matching optical flow.
//!
//! Flow vectors point from a reference pixel to the matching position in the
//! neighbor frame: `neighbor(p + flow(p)) ≈ reference(p)`.

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::pyramid::{build_pyramid, mask_pyramid, reflect_pad, upsample};
use crate::error::{invalid, Error, Result};
use crate::image::Plane;
use crate::raw::{gamma_image, scale_exposure, PackedRaw, DEFAULT_GAMMA};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct FlowConfig {
    pub levels: usize,
    pub block_size: usize,
    /// Integer search radius at every level but the coarsest.
    pub search_radius: i32,
    pub coarse_search_radius: i32,
    /// Largest flow component allowed at the finest level; halves per level.
    pub max_displacement: f32,
    pub gamma: f32,
    /// Reference samples at or above this are ignored when matching.
    pub saturation_level: f32,
    /// Rescale the reference to each neighbor's exposure before matching.
    pub exposure_matching: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 5,
            block_size: 8,
            search_radius: 2,
            coarse_search_radius: 3,
            max_displacement: 64.0,
            gamma: DEFAULT_GAMMA,
            saturation_level: 0.97,
            exposure_matching: true,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.block_size == 0 {
            return Err(invalid("flow needs at least one level and a non-empty block"));
        }
        if self.search_radius < 0 || self.coarse_search_radius < 0 {
            return Err(invalid("search radius must be non-negative"));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(invalid("gamma must be positive"));
        }
        Ok(())
    }

    /// Padding multiple that keeps every level's halving exact.
    pub fn pad_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Per-pixel 2-vector motion field at one scale, in pixels of that scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub dx: Plane,
    pub dy: Plane,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            dx: Plane::new(width, height),
            dy: Plane::new(width, height),
        }
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            dx: Plane::filled(width, height, dx),
            dy: Plane::filled(width, height, dy),
        }
    }

    pub fn width(&self) -> usize {
        self.dx.width
    }

    pub fn height(&self) -> usize {
        self.dx.height
    }

    /// Bilinear 2× upsample with vector lengths doubled.
    pub fn upsample2(&self, width: usize, height: usize) -> FlowField {
        FlowField {
            dx: upsample(&self.dx, width, height, 2.0),
            dy: upsample(&self.dy, width, height, 2.0),
        }
    }

    pub fn add(&self, other: &FlowField) -> FlowField {
        let sum = |a: &Plane, b: &Plane| Plane {
            width: a.width,
            height: a.height,
            data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        };
        FlowField {
            dx: sum(&self.dx, &other.dx),
            dy: sum(&self.dy, &other.dy),
        }
    }

    /// Mean endpoint error against a reference field over pixels accepted by `keep`.
    pub fn mean_endpoint_error(&self, truth: &FlowField, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let mut errs = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if keep(x, y) {
                    let ex = f64::from(self.dx.get(x, y) - truth.dx.get(x, y));
                    let ey = f64::from(self.dy.get(x, y) - truth.dy.get(x, y));
                    errs.push((ex * ex + ey * ey).sqrt());
                }
            }
        }
        crate::image::pairwise_mean(&errs)
    }
}

/// Flow estimates at every scale (finest first) together with the per-level
/// residual that was added to the upsampled coarser estimate.
#[derive(Clone, Debug)]
pub struct FlowPyramid {
    pub levels: Vec<FlowField>,
    pub residuals: Vec<FlowField>,
    /// Unpadded size of the finest level.
    pub width: usize,
    pub height: usize,
}

impl FlowPyramid {
    pub fn finest(&self) -> &FlowField {
        &self.levels[0]
    }

    /// Finest-level flow cropped to the unpadded frame size.
    pub fn finest_cropped(&self) -> FlowField {
        let f = self.finest();
        FlowField {
            dx: super::pyramid::crop(&f.dx, self.width, self.height),
            dy: super::pyramid::crop(&f.dy, self.width, self.height),
        }
    }

    /// A pyramid of all-zero flows for the given padded level sizes.
    pub fn zeros(width: usize, height: usize, levels: usize) -> Self {
        let mut fields = Vec::with_capacity(levels);
        let m = 1usize << (levels - 1);
        let (mut w, mut h) = (width.div_ceil(m) * m, height.div_ceil(m) * m);
        for _ in 0..levels {
            fields.push(FlowField::zeros(w, h));
            w /= 2;
            h /= 2;
        }
        FlowPyramid {
            residuals: fields.clone(),
            levels: fields,
            width,
            height,
        }
    }
}

/// Grayscale matching guide: channel mean of a gamma-corrected frame.
pub fn guide_plane(img: &crate::image::Image, gamma: f32) -> Plane {
    gamma_image(img, gamma).channel_mean()
}

/// Guides for one neighbor/reference pair. When exposure matching is on the
/// reference is first rescaled (and clipped) to the neighbor's exposure.
pub fn flow_guides(neighbor: &PackedRaw, reference: &PackedRaw, cfg: &FlowConfig) -> (Plane, Plane) {
    let nb = guide_plane(&neighbor.image, cfg.gamma);
    let rf = if cfg.exposure_matching {
        let matched = scale_exposure(&reference.image, reference.exposure_time, neighbor.exposure_time);
        guide_plane(&matched, cfg.gamma)
    } else {
        guide_plane(&reference.image, cfg.gamma)
    };
    (nb, rf)
}

/// Two flow pyramids (previous → reference, next → reference) from three
/// consecutive frames.
pub fn estimate_flow_triple(
    prev: &PackedRaw,
    reference: &PackedRaw,
    next: &PackedRaw,
    cfg: &FlowConfig,
) -> Result<(FlowPyramid, FlowPyramid)> {
    cfg.validate()?;
    for (name, f) in [("previous", prev), ("reference", reference), ("next", next)] {
        if !(f.exposure_time.is_finite() && f.exposure_time > 0.0) {
            return Err(invalid(format!("{name} frame has non-positive exposure time")));
        }
    }
    prev.image
        .ensure_same_shape(&reference.image, "previous vs reference")?;
    next.image.ensure_same_shape(&reference.image, "next vs reference")?;
    let (pn, pr) = flow_guides(prev, reference, cfg);
    let (nn, nr) = flow_guides(next, reference, cfg);
    let valid = reference_validity(&reference.image, cfg.saturation_level);
    let (a, b) = rayon::join(
        || estimate_flow_masked(&pn, &pr, Some(&valid), cfg),
        || estimate_flow_masked(&nn, &nr, Some(&valid), cfg),
    );
    Ok((a?, b?))
}

/// Pixels where no channel of the reference reaches `level`.
pub fn reference_validity(reference: &crate::image::Image, level: f32) -> Vec<bool> {
    let n = reference.pixels();
    (0..n)
        .map(|i| (0..reference.channels).all(|c| reference.data[c * n + i] < level))
        .collect()
}

/// Coarse-to-fine flow from `neighbor` to `reference` guides.
pub fn estimate_flow(neighbor: &Plane, reference: &Plane, cfg: &FlowConfig) -> Result<FlowPyramid> {
    estimate_flow_masked(neighbor, reference, None, cfg)
}

/// Like [`estimate_flow`], ignoring reference pixels marked invalid. Blocks
/// with too few valid pixels keep the flow propagated from the coarser level.
pub fn estimate_flow_masked(
    neighbor: &Plane,
    reference: &Plane,
    reference_valid: Option<&[bool]>,
    cfg: &FlowConfig,
) -> Result<FlowPyramid> {
    cfg.validate()?;
    if !neighbor.same_size(reference) {
        return Err(Error::DimensionMismatch("flow guides differ in size".into()));
    }
    if reference_valid.is_some_and(|v| v.len() != reference.data.len()) {
        return Err(Error::DimensionMismatch(
            "validity mask does not match the reference".into(),
        ));
    }
    let m = cfg.pad_multiple();
    let nb_pyr = build_pyramid(&reflect_pad(neighbor, m), cfg.levels)?;
    let rf_pyr = build_pyramid(&reflect_pad(reference, m), cfg.levels)?;
    let masks = match reference_valid {
        Some(v) => Some(mask_pyramid(v, reference.width, reference.height, m, cfg.levels)?),
        None => None,
    };

    let mut levels = vec![None; cfg.levels];
    let mut residuals = vec![None; cfg.levels];
    let mut coarser: Option<FlowField> = None;
    for s in (0..cfg.levels).rev() {
        let (w, h) = (rf_pyr[s].width, rf_pyr[s].height);
        let prior = match &coarser {
            Some(c) => c.upsample2(w, h),
            None => FlowField::zeros(w, h),
        };
        let radius = if s == cfg.levels - 1 {
            cfg.coarse_search_radius
        } else {
            cfg.search_radius
        };
        let limit = cfg.max_displacement / (1u32 << s) as f32;
        let mask = masks.as_ref().map(|m| m[s].as_slice());
        let residual = match_blocks(&nb_pyr[s], &rf_pyr[s], mask, &prior, cfg.block_size, radius, limit);
        let flow = prior.add(&residual);
        residuals[s] = Some(residual);
        levels[s] = Some(flow.clone());
        coarser = Some(flow);
    }
    Ok(FlowPyramid {
        levels: levels.into_iter().map(Option::unwrap).collect(),
        residuals: residuals.into_iter().map(Option::unwrap).collect(),
        width: neighbor.width,
        height: neighbor.height,
    })
}

/// Mean squared difference between a reference window and the neighbor
/// window displaced by an integer vector, over pixels that stay inside the
/// neighbor. Displacements leaving less than half the window are rejected,
/// as are windows where under a quarter of the reference is valid.
fn block_ssd(nb: &Plane, rf: &Plane, valid: Option<&[bool]>, win: Window, dx: i32, dy: i32) -> f32 {
    let Window { x0, y0, x1, y1 } = win;
    let mut usable = 0usize;
    let mut acc = 0.0f32;
    let mut count = 0usize;
    for y in y0..y1 {
        let sy = y as isize + dy as isize;
        if sy < 0 || sy >= nb.height as isize {
            continue;
        }
        for x in x0..x1 {
            let sx = x as isize + dx as isize;
            if sx < 0 || sx >= nb.width as isize {
                continue;
            }
            count += 1;
            if valid.is_some_and(|v| !v[y * rf.width + x]) {
                continue;
            }
            usable += 1;
            let d = nb.get(sx as usize, sy as usize) - rf.get(x, y);
            acc += d * d;
        }
    }
    if 2 * count < (x1 - x0) * (y1 - y0) || 4 * usable < count {
        return f32::INFINITY;
    }
    acc / usable as f32
}

#[derive(Clone, Copy)]
struct Window {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

/// Blocks that could not be matched take the mean of matched neighbors,
/// growing inward from the matched region; isolated ones keep their prior.
fn fill_unmatched(mut v: Vec<Option<(f32, f32)>>, priors: &[(f32, f32)], bw: usize, bh: usize) -> Vec<(f32, f32)> {
    loop {
        let mut updates = Vec::new();
        for b in 0..v.len() {
            if v[b].is_some() {
                continue;
            }
            let (bx, by) = (b % bw, b / bw);
            let (mut sx, mut sy, mut n) = (0.0f32, 0.0f32, 0usize);
            for ny in by.saturating_sub(1)..(by + 2).min(bh) {
                for nx in bx.saturating_sub(1)..(bx + 2).min(bw) {
                    if let Some((x, y)) = v[ny * bw + nx] {
                        sx += x;
                        sy += y;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                updates.push((b, (sx / n as f32, sy / n as f32)));
            }
        }
        if updates.is_empty() {
            break;
        }
        for (b, val) in updates {
            v[b] = Some(val);
        }
    }
    v.into_iter().zip(priors).map(|(m, &p)| m.unwrap_or(p)).collect()
}

/// Vertex offset of a parabola through three equally spaced costs.
fn parabolic_offset(minus: f32, center: f32, plus: f32) -> f32 {
    let denom = minus - 2.0 * center + plus;
    if center == 0.0 || !denom.is_finite() || denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
}

/// Residual on top of `prior` that makes the flow piecewise constant per
/// block. The integer search runs around the block's rounded prior, around
/// zero, and around the priors of the eight surrounding blocks. Matching uses
/// the block grown by half a block on each side; the winner gets a parabolic
/// sub-pixel refinement.
fn match_blocks(
    nb: &Plane,
    rf: &Plane,
    valid: Option<&[bool]>,
    prior: &FlowField,
    block: usize,
    radius: i32,
    limit: f32,
) -> FlowField {
    let (w, h) = (rf.width, rf.height);
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let margin = block / 2;
    let block_prior = |bx: usize, by: usize| {
        let (x0, y0) = (bx * block, by * block);
        let (x1, y1) = ((x0 + block).min(w), (y0 + block).min(h));
        let n = ((x1 - x0) * (y1 - y0)) as f32;
        let (mut px, mut py) = (0.0f32, 0.0f32);
        for y in y0..y1 {
            for x in x0..x1 {
                px += prior.dx.get(x, y);
                py += prior.dy.get(x, y);
            }
        }
        (px / n, py / n)
    };
    let priors: Vec<(f32, f32)> = (0..bw * bh).map(|b| block_prior(b % bw, b / bw)).collect();
    let ilimit = limit.floor() as i32;
    let matched: Vec<Option<(f32, f32)>> = (0..bw * bh)
        .into_par_iter()
        .map(|b| {
            let (bx, by) = (b % bw, b / bw);
            let (x0, y0) = (bx * block, by * block);
            let win = Window {
                x0: x0.saturating_sub(margin),
                y0: y0.saturating_sub(margin),
                x1: (x0 + block + margin).min(w),
                y1: (y0 + block + margin).min(h),
            };
            let (px, py) = priors[b];
            let cost = |vx: i32, vy: i32| block_ssd(nb, rf, valid, win, vx, vy);

            let mut centers = vec![(px.round() as i32, py.round() as i32), (0, 0)];
            for ny in by.saturating_sub(1)..(by + 2).min(bh) {
                for nx in bx.saturating_sub(1)..(bx + 2).min(bw) {
                    let (qx, qy) = priors[ny * bw + nx];
                    centers.push((qx.round() as i32, qy.round() as i32));
                }
            }
            centers.sort_unstable();
            centers.dedup();

            let mut seen = std::collections::HashSet::new();
            let mut best = (0i32, 0i32);
            let mut best_cost = f32::INFINITY;
            let mut best_dist = f32::INFINITY;
            for (cx, cy) in centers {
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (vx, vy) = (cx + dx, cy + dy);
                        if vx.abs() > ilimit || vy.abs() > ilimit || !seen.insert((vx, vy)) {
                            continue;
                        }
                        let c = cost(vx, vy);
                        let dist = (vx as f32 - px).powi(2) + (vy as f32 - py).powi(2);
                        if c < best_cost || (c == best_cost && dist < best_dist) {
                            best = (vx, vy);
                            best_cost = c;
                            best_dist = dist;
                        }
                    }
                }
            }
            if !best_cost.is_finite() {
                return None;
            }
            let sub_x = parabolic_offset(cost(best.0 - 1, best.1), best_cost, cost(best.0 + 1, best.1));
            let sub_y = parabolic_offset(cost(best.0, best.1 - 1), best_cost, cost(best.0, best.1 + 1));
            let vx = (best.0 as f32 + sub_x).clamp(-limit, limit);
            let vy = (best.1 as f32 + sub_y).clamp(-limit, limit);
            Some((vx, vy))
        })
        .collect();
    let vectors = fill_unmatched(matched, &priors, bw, bh);
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            // The residual lands each block exactly on its matched vector.
            let (vx, vy) = vectors[(y / block) * bw + x / block];
            out.dx.set(x, y, vx - prior.dx.get(x, y));
            out.dy.set(x, y, vy - prior.dy.get(x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn texture(x: f32, y: f32) -> f32 {
        0.5 + 0.2 * (0.31 * x + 0.17 * y).sin()
            + 0.15 * (0.11 * x - 0.23 * y).cos()
            + 0.1 * (0.05 * x * 0.7 + 0.4 * y).sin()
    }

    fn packed(w: usize, h: usize, t: f64, f: impl Fn(usize, usize) -> f32) -> PackedRaw {
        let plane = Plane::from_fn(w, h, f);
        let img = Image::from_planes(&[plane.clone(), plane.clone(), plane.clone(), plane]).unwrap();
        PackedRaw::new(img, t).unwrap()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = packed(64, 48, 1.0, |x, y| texture(x as f32, y as f32));
        let (a, b) = estimate_flow_triple(&f, &f, &f, &FlowConfig::default()).unwrap();
        for pyr in [a, b] {
            for level in &pyr.levels {
                assert!(level.dx.data.iter().chain(&level.dy.data).all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn pyramid_consistency_is_exact() {
        let rf = Plane::from_fn(64, 64, |x, y| texture(x as f32, y as f32));
        let nb = Plane::from_fn(64, 64, |x, y| texture(x as f32 - 2.0, y as f32 + 1.0));
        let pyr = estimate_flow(&nb, &rf, &FlowConfig::default()).unwrap();
        for s in 0..pyr.levels.len() - 1 {
            let fine = &pyr.levels[s];
            let rebuilt = pyr.levels[s + 1]
                .upsample2(fine.width(), fine.height())
                .add(&pyr.residuals[s]);
            assert_eq!(&rebuilt, fine);
        }
        let coarsest = pyr.levels.len() - 1;
        assert_eq!(pyr.levels[coarsest], pyr.residuals[coarsest]);
    }

    #[test]
    fn recovers_integer_shift() {
        let rf = Plane::from_fn(96, 96, |x, y| texture(x as f32, y as f32));
        let nb = Plane::from_fn(96, 96, |x, y| texture(x as f32 - 3.0, y as f32));
        let pyr = estimate_flow(&nb, &rf, &FlowConfig::default()).unwrap();
        let truth = FlowField::constant(96, 96, 3.0, 0.0);
        let epe = pyr
            .finest()
            .mean_endpoint_error(&truth, |x, y| (8..88).contains(&x) && (8..88).contains(&y));
        assert!(epe < 0.25, "epe {epe}");
    }

    #[test]
    fn flow_is_bounded() {
        let rf = Plane::from_fn(64, 64, |x, y| texture(x as f32, y as f32));
        let nb = Plane::from_fn(64, 64, |x, y| texture(x as f32 - 9.0, y as f32));
        let cfg = FlowConfig {
            max_displacement: 4.0,
            ..FlowConfig::default()
        };
        let pyr = estimate_flow(&nb, &rf, &cfg).unwrap();
        for (s, level) in pyr.levels.iter().enumerate() {
            let lim = 4.0 / (1 << s) as f32 + 1e-5;
            assert!(level.dx.data.iter().all(|v| v.abs() <= lim));
        }
    }

    #[test]
    fn parabola_vertex() {
        assert_eq!(parabolic_offset(1.0, 0.0, 1.0), 0.0);
        assert_eq!(parabolic_offset(3.0, 1.0, 3.0), 0.0);
        // Costs (x-0.25)^2 sampled at -1, 0, 1.
        let f = |x: f32| (x - 0.25) * (x - 0.25);
        assert!((parabolic_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let a = packed(16, 16, 1.0, |_, _| 0.5);
        let b = packed(32, 16, 1.0, |_, _| 0.5);
        assert!(estimate_flow_triple(&a, &b, &a, &FlowConfig::default()).is_err());
    }
}
