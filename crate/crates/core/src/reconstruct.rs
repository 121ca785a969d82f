//! Three-frame alternating-exposure HDR reconstruction: context assembly,
//! alignment of both neighbors, normalized weight fusion and a hard
//! reference pass-through in well-exposed pixels.

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::align::{align_pyramid, estimate_flow_masked, flow_guides, AlignConfig, FlowPyramid, Guide};
use crate::error::{invalid, Error, Result};
use crate::image::{pairwise_mean, Image, Plane};
use crate::raw::{ldr_to_radiance, pack_bayer, white_balance, BayerFrame, Layout, PackedRaw, RadianceImage, WbGains};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Prev,
    Ref,
    Next,
}

/// One frame of the reconstruction window in both the LDR and the
/// exposure-normalized domain.
#[derive(Clone, Debug)]
pub struct FrameContext {
    pub ldr: Image,
    pub radiance: Image,
    pub exposure_time: f64,
    pub role: Role,
}

/// Build contexts for a (prev, ref, next) window of white-balanced linear
/// frames. Non-alternating exposures are reported with a warning.
pub fn build_context(frames: [&Image; 3], times: [f64; 3]) -> Result<[FrameContext; 3]> {
    for t in times {
        if !(t.is_finite() && t > 0.0) {
            return Err(invalid(format!("exposure time must be positive, got {t}")));
        }
    }
    frames[0].ensure_same_shape(frames[1], "previous vs reference")?;
    frames[2].ensure_same_shape(frames[1], "next vs reference")?;
    if times[0] == times[1] || times[2] == times[1] {
        log::warn!("exposure times {times:?} do not alternate around the reference");
    }
    let roles = [Role::Prev, Role::Ref, Role::Next];
    Ok(std::array::from_fn(|i| FrameContext {
        ldr: frames[i].clone(),
        radiance: ldr_to_radiance(frames[i], times[i]),
        exposure_time: times[i],
        role: roles[i],
    }))
}

/// Hat-shaped well-exposedness: 0 at both ends, 1 on `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WellExposedness {
    pub low: f32,
    pub high: f32,
}

impl Default for WellExposedness {
    fn default() -> Self {
        WellExposedness { low: 0.05, high: 0.9 }
    }
}

impl WellExposedness {
    #[inline]
    pub fn score(&self, v: f32) -> f32 {
        if v <= 0.0 || v >= 1.0 {
            0.0
        } else if v < self.low {
            v / self.low
        } else if v <= self.high {
            1.0
        } else {
            (1.0 - v) / (1.0 - self.high)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct FusionConfig {
    pub well_exposed: WellExposedness,
    /// Added to the reference weight so the normalizer never vanishes.
    pub epsilon: f32,
    /// Reference pixels scoring at least this are passed through unchanged.
    pub pass_through: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            well_exposed: WellExposedness::default(),
            epsilon: 1e-4,
            pass_through: 0.99,
        }
    }
}

/// Raw and normalized fusion weights for (prev, ref, next); each is an
/// image with the same shape as the frames.
#[derive(Clone, Debug)]
pub struct FusionWeights {
    pub raw: [Image; 3],
    pub normalized: [Image; 3],
}

/// Weights from well-exposedness of the reference and the warped neighbors,
/// the latter scaled by alignment confidence, normalized to sum to one.
pub fn compute_weights(
    reference_ldr: &Image,
    warped_neighbors: [&Image; 2],
    confidence: [&Plane; 2],
    cfg: &FusionConfig,
) -> Result<FusionWeights> {
    for (nb, conf) in warped_neighbors.iter().zip(confidence) {
        nb.ensure_same_shape(reference_ldr, "warped neighbor vs reference")?;
        if conf.width != reference_ldr.width || conf.height != reference_ldr.height {
            return Err(Error::DimensionMismatch("confidence map size".into()));
        }
        if !conf.data.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(invalid("confidence must lie in [0, 1]"));
        }
    }
    let hat = cfg.well_exposed;
    let n = reference_ldr.pixels();
    let a_ref = reference_ldr.map(|v| hat.score(v) + cfg.epsilon);
    let neighbor_weight = |img: &Image, conf: &Plane| {
        let mut out = img.map(|v| hat.score(v));
        for c in 0..out.channels {
            for (w, k) in out.channel_mut(c).iter_mut().zip(&conf.data) {
                *w *= k;
            }
        }
        out
    };
    let a_prev = neighbor_weight(warped_neighbors[0], confidence[0]);
    let a_next = neighbor_weight(warped_neighbors[1], confidence[1]);
    let mut norm = [a_prev.clone(), a_ref.clone(), a_next.clone()];
    for i in 0..n * reference_ldr.channels {
        let total = a_prev.data[i] + a_ref.data[i] + a_next.data[i];
        for w in norm.iter_mut() {
            w.data[i] /= total;
        }
    }
    Ok(FusionWeights {
        raw: [a_prev, a_ref, a_next],
        normalized: norm,
    })
}

/// Per-pixel convex combination of the three radiance estimates.
pub fn fuse(radiances: [&Image; 3], weights: &FusionWeights) -> Result<Image> {
    for r in &radiances[1..] {
        r.ensure_same_shape(radiances[0], "fusion sources")?;
    }
    for w in &weights.normalized {
        w.ensure_same_shape(radiances[0], "fusion weights")?;
    }
    let mut out = radiances[0].clone();
    for (i, o) in out.data.iter_mut().enumerate() {
        let x = [radiances[0].data[i], radiances[1].data[i], radiances[2].data[i]];
        let acc: f64 = (0..3)
            .map(|j| f64::from(weights.normalized[j].data[i]) * f64::from(x[j]))
            .sum();
        let lo = x[0].min(x[1]).min(x[2]);
        let hi = x[0].max(x[1]).max(x[2]);
        // Rounding can push a convex combination a ulp outside the hull.
        *o = (acc as f32).clamp(lo, hi);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct ReconstructConfig {
    pub align: AlignConfig,
    pub fusion: FusionConfig,
}

/// Per-frame diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FrameStats {
    pub index: usize,
    /// Mean normalized weight of (prev, ref, next).
    pub weight_mass: [f64; 3],
    /// Fraction of reference samples at or above the saturation level.
    pub saturated_fraction: f64,
    /// Fraction of samples taken directly from the reference.
    pub pass_through_fraction: f64,
    pub mean_confidence: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub hdr: Image,
    pub stats: FrameStats,
}

/// Reconstruct the reference HDR frame from three white-balanced linear
/// LDR frames (any channel count) with their exposure times.
pub fn reconstruct_linear(frames: [&Image; 3], times: [f64; 3], cfg: &ReconstructConfig) -> Result<Reconstruction> {
    cfg.align.validate()?;
    let ctx = build_context(frames, times)?;
    let (w, h) = (frames[1].width, frames[1].height);
    let sat = cfg.align.saturation_level;
    let guide_of = |ldr: &Image, values: Plane| {
        let n = ldr.pixels();
        let valid = (0..n)
            .map(|i| (0..ldr.channels).all(|c| ldr.data[c * n + i] < sat))
            .collect();
        Guide { values, valid }
    };

    let align_one = |nb: &FrameContext| -> Result<crate::align::Aligned> {
        let nb_raw = PackedLike(&nb.ldr, nb.exposure_time);
        let rf_raw = PackedLike(&ctx[1].ldr, ctx[1].exposure_time);
        let (ng, rg) = flow_guides(&nb_raw.packed(), &rf_raw.packed(), &cfg.align.flow);
        let rf_guide = guide_of(&ctx[1].ldr, rg);
        let flow = if cfg.align.use_flow {
            estimate_flow_masked(&ng, &rf_guide.values, Some(&rf_guide.valid), &cfg.align.flow)?
        } else {
            FlowPyramid::zeros(w, h, cfg.align.flow.levels)
        };
        let channels = nb.radiance.planes();
        align_pyramid(&channels, &guide_of(&nb.ldr, ng), &rf_guide, &flow, &cfg.align)
    };
    let (prev, next) = rayon::join(|| align_one(&ctx[0]), || align_one(&ctx[2]));
    let (prev, next) = (prev?, next?);
    let warped_rad = |a: &crate::align::Aligned| Image::from_planes(&a.channels);
    let prev_rad = warped_rad(&prev)?;
    let next_rad = warped_rad(&next)?;
    // Warping is linear, so the warped LDR is the warped radiance times t.
    let to_ldr = |img: &Image, t: f64| img.map(|v| (v * t as f32).clamp(0.0, 1.0));
    let prev_ldr = to_ldr(&prev_rad, times[0]);
    let next_ldr = to_ldr(&next_rad, times[2]);

    let weights = compute_weights(
        &ctx[1].ldr,
        [&prev_ldr, &next_ldr],
        [&prev.confidence, &next.confidence],
        &cfg.fusion,
    )?;
    let mut hdr = fuse([&prev_rad, &ctx[1].radiance, &next_rad], &weights)?;

    let hat = cfg.fusion.well_exposed;
    let mut passed = 0usize;
    for (i, o) in hdr.data.iter_mut().enumerate() {
        if hat.score(ctx[1].ldr.data[i]) >= cfg.fusion.pass_through {
            *o = ctx[1].radiance.data[i];
            passed += 1;
        }
        *o = o.max(0.0);
    }

    let total = hdr.data.len() as f64;
    let mass = |img: &Image| pairwise_mean(&img.data.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
    let mean_plane = |p: &Plane| pairwise_mean(&p.data.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
    let stats = FrameStats {
        index: 0,
        weight_mass: [
            mass(&weights.normalized[0]),
            mass(&weights.normalized[1]),
            mass(&weights.normalized[2]),
        ],
        saturated_fraction: ctx[1].ldr.data.iter().filter(|&&v| v >= sat).count() as f64 / total,
        pass_through_fraction: passed as f64 / total,
        mean_confidence: [mean_plane(&prev.confidence), mean_plane(&next.confidence)],
    };
    debug_assert_eq!((hdr.width, hdr.height), (w, h));
    Ok(Reconstruction { hdr, stats })
}

/// Borrowed LDR image viewed as a packed frame for guide construction.
struct PackedLike<'a>(&'a Image, f64);

impl PackedLike<'_> {
    fn packed(&self) -> PackedRaw {
        PackedRaw {
            image: self.0.clone(),
            exposure_time: self.1,
            white_balanced: true,
        }
    }
}

/// Full raw path for one window: pack, white balance, reconstruct.
/// Exposure times come from each frame with analog gain folded in.
pub fn reconstruct_frame(
    frames: [&BayerFrame; 3],
    wb_gains: WbGains,
    cfg: &ReconstructConfig,
) -> Result<RadianceImage> {
    let packed = frames
        .iter()
        .map(|f| pack_bayer(f).and_then(|p| white_balance(&p, wb_gains)))
        .collect::<Result<Vec<_>>>()?;
    let times: [f64; 3] = std::array::from_fn(|i| frames[i].effective_exposure());
    let r = reconstruct_linear([&packed[0].image, &packed[1].image, &packed[2].image], times, cfg)?;
    RadianceImage::new(r.hdr, Layout::Raw4)
}

/// A reconstructed interior frame of a sequence.
#[derive(Clone, Debug)]
pub struct VideoFrame {
    pub index: usize,
    pub hdr: Image,
    pub stats: FrameStats,
}

#[derive(Clone, Debug)]
pub struct VideoReconstruction {
    pub frames: Vec<VideoFrame>,
    /// Input indices with no full window (first and last).
    pub skipped: Vec<usize>,
}

/// Slide a 3-frame window over a sequence of white-balanced linear frames,
/// producing one HDR frame per interior input frame. Windows run in
/// parallel; output order follows the input.
pub fn reconstruct_video(frames: &[Image], times: &[f64], cfg: &ReconstructConfig) -> Result<VideoReconstruction> {
    if frames.len() != times.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but {} exposure times",
            frames.len(),
            times.len()
        )));
    }
    if frames.len() < 3 {
        return Err(invalid(format!("need at least 3 frames, got {}", frames.len())));
    }
    let out = (1..frames.len() - 1)
        .into_par_iter()
        .map(|i| {
            let r = reconstruct_linear(
                [&frames[i - 1], &frames[i], &frames[i + 1]],
                [times[i - 1], times[i], times[i + 1]],
                cfg,
            )?;
            let mut stats = r.stats;
            stats.index = i;
            Ok(VideoFrame {
                index: i,
                hdr: r.hdr,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VideoReconstruction {
        frames: out,
        skipped: vec![0, frames.len() - 1],
    })
}
