//! Deformable sampling: per-pixel, per-tap offsets with modulation, and a
//! local block search that refines offsets against the reference.

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::flow::FlowField;
use crate::error::{invalid, Error, Result};
use crate::image::Plane;

/// Number of taps of the 3×3 deformable kernel.
pub const KERNEL_TAPS: usize = 9;
/// Index of the zero-displacement tap.
pub const CENTER_TAP: usize = 4;

/// Fixed (dx, dy) displacement of tap `k` in the 3×3 kernel, row-major.
#[inline]
pub fn kernel_displacement(k: usize) -> (f32, f32) {
    ((k % 3) as f32 - 1.0, (k / 3) as f32 - 1.0)
}

/// Per-pixel sampling offsets for each kernel tap plus a per-tap
/// modulation weight in [0, 1]. Storage is tap-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub width: usize,
    pub height: usize,
    pub taps: usize,
    pub dx: Vec<f32>,
    pub dy: Vec<f32>,
    pub modulation: Vec<f32>,
}

impl OffsetField {
    #[inline]
    fn idx(&self, k: usize, x: usize, y: usize) -> usize {
        (k * self.height + y) * self.width + x
    }

    #[inline]
    pub fn offset(&self, k: usize, x: usize, y: usize) -> (f32, f32) {
        let i = self.idx(k, x, y);
        (self.dx[i], self.dy[i])
    }

    #[inline]
    pub fn modulation_at(&self, k: usize, x: usize, y: usize) -> f32 {
        self.modulation[self.idx(k, x, y)]
    }

    /// Center-tap offsets as a flow field.
    pub fn center_flow(&self) -> FlowField {
        let n = self.width * self.height;
        let k = if self.taps == KERNEL_TAPS { CENTER_TAP } else { 0 };
        FlowField {
            dx: Plane::from_vec(self.width, self.height, self.dx[k * n..(k + 1) * n].to_vec()).unwrap(),
            dy: Plane::from_vec(self.width, self.height, self.dy[k * n..(k + 1) * n].to_vec()).unwrap(),
        }
    }

    /// Center-tap modulation as a plane.
    pub fn center_modulation(&self) -> Plane {
        let n = self.width * self.height;
        let k = if self.taps == KERNEL_TAPS { CENTER_TAP } else { 0 };
        Plane::from_vec(self.width, self.height, self.modulation[k * n..(k + 1) * n].to_vec()).unwrap()
    }

    pub fn with_unit_modulation(&self) -> OffsetField {
        OffsetField {
            modulation: vec![1.0; self.modulation.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.taps * self.width * self.height;
        if self.dx.len() != n || self.dy.len() != n || self.modulation.len() != n {
            return Err(Error::DimensionMismatch("offset field storage size".into()));
        }
        if !self.dx.iter().chain(&self.dy).all(|v| v.is_finite()) {
            return Err(invalid("offsets must be finite"));
        }
        if !self.modulation.iter().all(|m| (0.0..=1.0).contains(m)) {
            return Err(invalid("modulation must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Each tap samples at the flow vector plus its fixed kernel displacement,
/// with unit modulation.
pub fn flow_to_offsets(flow: &FlowField) -> OffsetField {
    let (w, h) = (flow.width(), flow.height());
    let n = w * h;
    let mut dx = Vec::with_capacity(KERNEL_TAPS * n);
    let mut dy = Vec::with_capacity(KERNEL_TAPS * n);
    for k in 0..KERNEL_TAPS {
        let (kx, ky) = kernel_displacement(k);
        dx.extend(flow.dx.data.iter().map(|v| v + kx));
        dy.extend(flow.dy.data.iter().map(|v| v + ky));
    }
    OffsetField {
        width: w,
        height: h,
        taps: KERNEL_TAPS,
        dx,
        dy,
        modulation: vec![1.0; KERNEL_TAPS * n],
    }
}

/// Per-tap kernel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TapWeights(pub Vec<f32>);

impl TapWeights {
    /// Weight 1 on the center tap only: deformable sampling becomes plain
    /// backward warping along the center offsets.
    pub fn center(taps: usize) -> Self {
        let mut w = vec![0.0; taps];
        w[if taps == KERNEL_TAPS { CENTER_TAP } else { 0 }] = 1.0;
        TapWeights(w)
    }
}

/// `out(p) = Σ_k w_k · m_k(p) · bilinear(img, p + o_k(p))`, clamp-to-edge.
pub fn deformable_sample(img: &Plane, offsets: &OffsetField, weights: &TapWeights) -> Result<Plane> {
    if img.width != offsets.width || img.height != offsets.height {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs offsets {}x{}",
            img.width, img.height, offsets.width, offsets.height
        )));
    }
    if weights.0.len() != offsets.taps {
        return Err(Error::DimensionMismatch(format!(
            "{} tap weights for {} taps",
            weights.0.len(),
            offsets.taps
        )));
    }
    if !offsets.dx.iter().chain(&offsets.dy).all(|v| v.is_finite()) {
        return Err(invalid("offsets must be finite"));
    }
    let (w, h) = (img.width, img.height);
    let active: Vec<(usize, f32)> = weights
        .0
        .iter()
        .enumerate()
        .filter(|(_, &wk)| wk != 0.0)
        .map(|(k, &wk)| (k, wk))
        .collect();
    let mut data = vec![0.0f32; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for &(k, wk) in &active {
                let (ox, oy) = offsets.offset(k, x, y);
                let m = offsets.modulation_at(k, x, y);
                acc += wk * m * img.bilinear(x as f32 + ox, y as f32 + oy);
            }
            *out = acc;
        }
    });
    Ok(Plane {
        width: w,
        height: h,
        data,
    })
}

/// Matching guide with a per-pixel validity mask (false where saturated).
#[derive(Clone, Debug, PartialEq)]
pub struct Guide {
    pub values: Plane,
    pub valid: Vec<bool>,
}

impl Guide {
    pub fn all_valid(values: Plane) -> Self {
        let n = values.data.len();
        Guide {
            values,
            valid: vec![true; n],
        }
    }

    #[inline]
    fn valid_at(&self, x: f32, y: f32) -> bool {
        let xi = (x.round() as isize).clamp(0, self.values.width as isize - 1) as usize;
        let yi = (y.round() as isize).clamp(0, self.values.height as isize - 1) as usize;
        self.valid[yi * self.values.width + xi]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct RefineConfig {
    pub block_size: usize,
    pub search_radius: i32,
    /// Per-pixel cost charged for modulation where either side is saturated;
    /// a block whose charged cost reaches this gets the floor modulation.
    /// Blocks with under a quarter usable pixels are not searched.
    pub fallback_cost: f32,
    pub modulation_floor: f32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            block_size: 8,
            search_radius: 2,
            fallback_cost: 0.2,
            modulation_floor: 0.1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.search_radius < 0 {
            return Err(invalid("refinement needs a non-empty block and non-negative radius"));
        }
        if self.fallback_cost.is_nan() || self.fallback_cost <= 0.0 || !(0.0..=1.0).contains(&self.modulation_floor) {
            return Err(invalid("fallback cost must be positive and floor in [0, 1]"));
        }
        Ok(())
    }
}

/// Search an integer residual per block that minimizes the mean absolute
/// difference between the neighbor sampled along the center offsets and the
/// reference. The residual is added to every tap of the block; modulation
/// drops from 1 toward the floor as the best cost approaches the fallback.
pub fn refine_offsets(
    neighbor: &Guide,
    reference: &Guide,
    base: &OffsetField,
    cfg: &RefineConfig,
) -> Result<OffsetField> {
    refine_offsets_among(neighbor, reference, &[base], cfg)
}

/// Like [`refine_offsets`], but each block may start from any of several
/// base fields; the lowest-cost start wins, earlier bases winning ties.
pub fn refine_offsets_among(
    neighbor: &Guide,
    reference: &Guide,
    bases: &[&OffsetField],
    cfg: &RefineConfig,
) -> Result<OffsetField> {
    cfg.validate()?;
    let (w, h) = (reference.values.width, reference.values.height);
    let Some(first) = bases.first() else {
        return Err(invalid("refinement needs at least one base offset field"));
    };
    if !neighbor.values.same_size(&reference.values)
        || bases
            .iter()
            .any(|b| b.width != w || b.height != h || b.taps != first.taps)
    {
        return Err(Error::DimensionMismatch("refinement inputs differ in size".into()));
    }
    let center = if first.taps == KERNEL_TAPS { CENTER_TAP } else { 0 };
    let block = cfg.block_size;
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);
    let r = cfg.search_radius;
    let results: Vec<(usize, i32, i32, f32)> = (0..bw * bh)
        .into_par_iter()
        .map(|b| {
            let (x0, y0) = ((b % bw) * block, (b / bw) * block);
            let (x1, y1) = ((x0 + block).min(w), (y0 + block).min(h));
            let n = ((x1 - x0) * (y1 - y0)) as f32;
            let mut best = (0usize, 0i32, 0i32);
            let mut best_cost = f32::INFINITY;
            let mut best_charged = cfg.fallback_cost;
            for (bi, base) in bases.iter().enumerate() {
                // Every candidate is scored on the same pixels: those whose
                // whole search neighborhood in the neighbor is valid.
                let usable_px: Vec<bool> = (y0..y1)
                    .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                    .map(|(x, y)| {
                        let (ox, oy) = base.offset(center, x, y);
                        let (bx, by) = (x as f32 + ox, y as f32 + oy);
                        reference.valid[y * w + x]
                            && (-r..=r).all(|dy| (-r..=r).all(|dx| neighbor.valid_at(bx + dx as f32, by + dy as f32)))
                    })
                    .collect();
                // (mean over usable pixels, mean with the fallback charged for unusable ones)
                let cost = |rx: i32, ry: i32| {
                    let mut acc = 0.0f32;
                    let mut inside = 0.0f32;
                    let mut usable = 0.0f32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let (ox, oy) = base.offset(center, x, y);
                            let sx = x as f32 + ox + rx as f32;
                            let sy = y as f32 + oy + ry as f32;
                            // Samples off the frame say nothing about the match.
                            if sx < -0.5 || sy < -0.5 || sx > w as f32 - 0.5 || sy > h as f32 - 0.5 {
                                continue;
                            }
                            inside += 1.0;
                            if usable_px[(y - y0) * (x1 - x0) + (x - x0)] {
                                acc += (neighbor.values.bilinear(sx, sy) - reference.values.get(x, y)).abs();
                                usable += 1.0;
                            }
                        }
                    }
                    if 2.0 * inside < n || 4.0 * usable < inside {
                        (f32::INFINITY, cfg.fallback_cost)
                    } else {
                        let charged = (acc + cfg.fallback_cost * (inside - usable)) / inside;
                        (acc / usable, charged)
                    }
                };
                for ry in -r..=r {
                    for rx in -r..=r {
                        let (c, charged) = cost(rx, ry);
                        let better = c < best_cost
                            || (c == best_cost
                                && bi == best.0
                                && rx * rx + ry * ry < best.1 * best.1 + best.2 * best.2);
                        if better {
                            best = (bi, rx, ry);
                            best_cost = c;
                            best_charged = charged;
                        }
                    }
                }
            }
            if !best_cost.is_finite() {
                return (0, 0, 0, cfg.modulation_floor);
            }
            let m = (1.0 - best_charged / cfg.fallback_cost)
                .max(cfg.modulation_floor)
                .min(1.0);
            (best.0, best.1, best.2, m)
        })
        .collect();

    let mut out = (*first).clone();
    for k in 0..first.taps {
        for y in 0..h {
            for x in 0..w {
                let (bi, rx, ry, m) = results[(y / block) * bw + x / block];
                let i = (k * h + y) * w + x;
                out.dx[i] = bases[bi].dx[i] + rx as f32;
                out.dy[i] = bases[bi].dy[i] + ry as f32;
                out.modulation[i] = m;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f32, y: f32) -> f32 {
        0.5 + 0.25 * (0.9 * x + 0.3 * y).sin() * (0.4 * y - 0.2 * x).cos() + 0.1 * (1.7 * x).sin()
    }

    #[test]
    fn zero_flow_gives_canonical_kernel() {
        let o = flow_to_offsets(&FlowField::zeros(3, 2));
        for k in 0..KERNEL_TAPS {
            assert_eq!(o.offset(k, 1, 1), kernel_displacement(k));
        }
        assert_eq!(o.offset(CENTER_TAP, 0, 0), (0.0, 0.0));
        assert_eq!(o.offset(0, 0, 0), (-1.0, -1.0));
        assert!(o.modulation.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn constant_flow_shifts_all_taps() {
        let o = flow_to_offsets(&FlowField::constant(4, 4, 3.0, 0.0));
        for k in 0..KERNEL_TAPS {
            let (kx, ky) = kernel_displacement(k);
            assert_eq!(o.offset(k, 2, 3), (3.0 + kx, ky));
        }
    }

    #[test]
    fn offsets_equal_flow_plus_kernel_grid() {
        let flow = FlowField {
            dx: Plane::from_fn(5, 4, |x, y| (x as f32 * 0.37 - y as f32 * 1.1).sin() * 3.0),
            dy: Plane::from_fn(5, 4, |x, y| (x as f32 * 0.7 + y as f32).cos() * 2.0),
        };
        let o = flow_to_offsets(&flow);
        for k in 0..KERNEL_TAPS {
            let (kx, ky) = kernel_displacement(k);
            for y in 0..4 {
                for x in 0..5 {
                    assert_eq!(o.offset(k, x, y), (flow.dx.get(x, y) + kx, flow.dy.get(x, y) + ky));
                }
            }
        }
    }

    #[test]
    fn zero_offsets_center_tap_is_identity() {
        let img = Plane::from_fn(7, 5, |x, y| texture(x as f32, y as f32));
        let o = flow_to_offsets(&FlowField::zeros(7, 5));
        let out = deformable_sample(&img, &o, &TapWeights::center(KERNEL_TAPS)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn ramp_shifts() {
        let ramp = Plane::from_fn(8, 2, |x, _| x as f32);
        let one = flow_to_offsets(&FlowField::constant(8, 2, 1.0, 0.0));
        let out = deformable_sample(&ramp, &one, &TapWeights::center(KERNEL_TAPS)).unwrap();
        for x in 0..7 {
            assert_eq!(out.get(x, 0), x as f32 + 1.0);
        }
        let half = flow_to_offsets(&FlowField::constant(8, 2, 0.5, 0.0));
        let out = deformable_sample(&ramp, &half, &TapWeights::center(KERNEL_TAPS)).unwrap();
        for x in 0..7 {
            assert_eq!(out.get(x, 0), x as f32 + 0.5);
        }
    }

    #[test]
    fn box_kernel_and_modulation() {
        let img = Plane::filled(4, 4, 2.0);
        let mut o = flow_to_offsets(&FlowField::zeros(4, 4));
        o.modulation.iter_mut().for_each(|m| *m = 0.5);
        let out = deformable_sample(&img, &o, &TapWeights(vec![1.0 / 9.0; 9])).unwrap();
        assert!(out.data.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn refine_recovers_known_residual() {
        let (w, h) = (32, 32);
        let rf = Guide::all_valid(Plane::from_fn(w, h, |x, y| texture(x as f32, y as f32)));
        // neighbor(p + true) = ref(p) with true = (2, -1)
        let nb = Guide::all_valid(Plane::from_fn(w, h, |x, y| texture(x as f32 - 2.0, y as f32 + 1.0)));
        // Base offsets miss the true displacement by (-1, +2).
        let base = flow_to_offsets(&FlowField::constant(w, h, 3.0, -3.0));
        let out = refine_offsets(&nb, &rf, &base, &RefineConfig::default()).unwrap();
        let (dx, dy) = out.offset(CENTER_TAP, 12, 12);
        assert_eq!((dx - 3.0, dy + 3.0), (-1.0, 2.0));
        assert_eq!(out.modulation_at(CENTER_TAP, 12, 12), 1.0);
        let (tx, ty) = out.offset(0, 12, 12);
        assert_eq!((tx, ty), (2.0 - 1.0, -1.0 - 1.0));
    }

    #[test]
    fn refine_aligned_inputs_keep_base() {
        let p = Plane::from_fn(16, 16, |x, y| texture(x as f32, y as f32));
        let g = Guide::all_valid(p);
        let base = flow_to_offsets(&FlowField::zeros(16, 16));
        let out = refine_offsets(&g, &g, &base, &RefineConfig::default()).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn saturated_block_falls_back() {
        let mut g = Guide::all_valid(Plane::from_fn(16, 16, |x, y| texture(x as f32, y as f32)));
        g.valid.iter_mut().for_each(|v| *v = false);
        let base = flow_to_offsets(&FlowField::constant(16, 16, 1.5, -0.5));
        let cfg = RefineConfig::default();
        let out = refine_offsets(&g, &g, &base, &cfg).unwrap();
        assert_eq!(out.dx, base.dx);
        assert_eq!(out.dy, base.dy);
        assert!(out.modulation.iter().all(|&m| m == cfg.modulation_floor));
    }
}
