//! Per-frame HDR ground truth from a staggered long/short exposure pair.
//!
//! Raw-domain merging white balances both exposures *before* blending. Doing
//! it afterwards scales clipped highlights (where R and G read the same raw
//! value) by the red gain and leaves a red cast; see
//! [`merge_raw_unbalanced`] for the reversed order, kept for regression
//! checks.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{pairwise_mean, Image, Plane};
use crate::isp::Transfer;
use crate::raw::{white_balance, Layout, PackedRaw, RadianceImage, SrgbImage, WbGains};

/// Linear ramp handing weight from the long to the short exposure as the
/// long exposure approaches saturation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MergeCurve {
    pub tau_low: f32,
    pub tau_high: f32,
}

impl Default for MergeCurve {
    fn default() -> Self {
        MergeCurve {
            tau_low: 0.85,
            tau_high: 0.97,
        }
    }
}

impl MergeCurve {
    pub fn new(tau_low: f32, tau_high: f32) -> Result<Self> {
        let c = MergeCurve { tau_low, tau_high };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0 {
            Ok(())
        } else {
            Err(invalid(format!(
                "merge curve needs 0 <= tau_low < tau_high <= 1, got ({}, {})",
                self.tau_low, self.tau_high
            )))
        }
    }

    /// Weight of the long exposure at normalized long-frame value `v`.
    #[inline]
    pub fn w_long(&self, v: f32) -> f32 {
        if v <= self.tau_low {
            1.0
        } else if v >= self.tau_high {
            0.0
        } else {
            (self.tau_high - v) / (self.tau_high - self.tau_low)
        }
    }

    #[inline]
    pub fn w_short(&self, v: f32) -> f32 {
        1.0 - self.w_long(v)
    }
}

/// Long and short exposure of the same frame.
#[derive(Clone, Debug)]
pub struct StaggeredPair<T> {
    pub long: T,
    pub short: T,
    pub t_long: f64,
    pub t_short: f64,
}

impl<T> StaggeredPair<T> {
    /// `t_long / t_short`; nominally 8 to 9 for the staggered sensor mode.
    pub fn ratio(&self) -> f64 {
        self.t_long / self.t_short
    }

    fn require_ratio_above_one(&self) -> Result<()> {
        if self.t_short > 0.0 && self.ratio() > 1.0 {
            Ok(())
        } else {
            Err(invalid(format!(
                "long/short exposure ratio must exceed 1, got {}",
                self.ratio()
            )))
        }
    }
}

impl StaggeredPair<PackedRaw> {
    /// Pair two raw exposures, taking the times from the frames.
    pub fn raw(long: PackedRaw, short: PackedRaw) -> Result<Self> {
        long.image.ensure_same_shape(&short.image, "staggered pair")?;
        Ok(StaggeredPair {
            t_long: long.exposure_time,
            t_short: short.exposure_time,
            long,
            short,
        })
    }

    fn balanced(&self, gains: WbGains) -> Result<(PackedRaw, PackedRaw)> {
        let wb = |p: &PackedRaw| {
            if p.white_balanced {
                Ok(p.clone())
            } else {
                white_balance(p, gains)
            }
        };
        Ok((wb(&self.long)?, wb(&self.short)?))
    }
}

impl StaggeredPair<SrgbImage> {
    pub fn srgb(long: SrgbImage, short: SrgbImage, t_long: f64, t_short: f64) -> Result<Self> {
        long.image.ensure_same_shape(&short.image, "staggered pair")?;
        Ok(StaggeredPair {
            long,
            short,
            t_long,
            t_short,
        })
    }
}

/// Blend two linear exposures per pixel and channel; `drive` selects the
/// long-frame value that indexes the curve.
fn blend(long: &Image, short: &Image, drive: &Image, t_long: f64, t_short: f64, curve: &MergeCurve) -> Image {
    let inv_l = (1.0 / t_long) as f32;
    let inv_s = (1.0 / t_short) as f32;
    let data = long
        .data
        .iter()
        .zip(&short.data)
        .zip(&drive.data)
        .map(|((&l, &s), &d)| {
            let w = curve.w_long(d);
            (w * l * inv_l + (1.0 - w) * s * inv_s).max(0.0)
        })
        .collect();
    Image {
        width: long.width,
        height: long.height,
        channels: long.channels,
        data,
    }
}

/// Raw-domain HDR merge: white balance both exposures, then blend with
/// weights driven by the balanced long frame.
pub fn merge_raw(pair: &StaggeredPair<PackedRaw>, curve: &MergeCurve, gains: WbGains) -> Result<RadianceImage> {
    curve.validate()?;
    pair.long.image.ensure_same_shape(&pair.short.image, "staggered pair")?;
    pair.require_ratio_above_one()?;
    if pair.long.white_balanced || pair.short.white_balanced {
        return Err(Error::AlreadyWhiteBalanced);
    }
    let (l, s) = pair.balanced(gains)?;
    Ok(RadianceImage {
        image: blend(&l.image, &s.image, &l.image, pair.t_long, pair.t_short, curve),
        layout: Layout::Raw4,
    })
}

/// Blend without white balance. Applying the gains to this result afterwards
/// is the wrong ordering and reddens saturated regions.
pub fn merge_raw_unbalanced(pair: &StaggeredPair<PackedRaw>, curve: &MergeCurve) -> Result<RadianceImage> {
    curve.validate()?;
    pair.long.image.ensure_same_shape(&pair.short.image, "staggered pair")?;
    pair.require_ratio_above_one()?;
    Ok(RadianceImage {
        image: blend(
            &pair.long.image,
            &pair.short.image,
            &pair.long.image,
            pair.t_long,
            pair.t_short,
            curve,
        ),
        layout: Layout::Raw4,
    })
}

/// sRGB-domain merge: linearize through `crf_inverse`, normalize by exposure,
/// blend with weights driven by the long frame's display value.
pub fn merge_srgb(pair: &StaggeredPair<SrgbImage>, curve: &MergeCurve, crf_inverse: Transfer) -> Result<RadianceImage> {
    curve.validate()?;
    pair.long.image.ensure_same_shape(&pair.short.image, "staggered pair")?;
    pair.require_ratio_above_one()?;
    let l = pair.long.image.map(|v| crf_inverse.decode(v));
    let s = pair.short.image.map(|v| crf_inverse.decode(v));
    Ok(RadianceImage {
        image: blend(&l, &s, &pair.long.image, pair.t_long, pair.t_short, curve),
        layout: Layout::Rgb3,
    })
}

/// Exposure-equalized residual between the two halves of a staggered pair.
#[derive(Clone, Debug)]
pub struct Displacement {
    /// Per-pixel maximum over channels of `|clip(short * ratio) - long|`.
    pub magnitude: Plane,
    /// Rendered heat map of `magnitude`.
    pub heat_map: SrgbImage,
    /// Mean residual over channel samples where the long frame is below
    /// `tau_high`.
    pub masked_mean: f64,
    /// Fraction of channel samples that entered `masked_mean`.
    pub masked_fraction: f64,
}

/// Displacement values at or above this render at full heat.
pub const HEAT_MAP_FULL_SCALE: f32 = 0.25;

pub fn displacement_map(pair: &StaggeredPair<PackedRaw>, gains: WbGains, curve: &MergeCurve) -> Result<Displacement> {
    pair.long.image.ensure_same_shape(&pair.short.image, "staggered pair")?;
    let (l, s) = pair.balanced(gains)?;
    let ratio = pair.ratio() as f32;
    let (w, h, n) = (l.width(), l.height(), l.image.pixels());
    let mut magnitude = Plane::new(w, h);
    let mut masked = Vec::with_capacity(n * 4);
    for c in 0..4 {
        let lc = l.image.channel(c);
        let sc = s.image.channel(c);
        for i in 0..n {
            let d = ((sc[i] * ratio).clamp(0.0, 1.0) - lc[i]).abs();
            if d > magnitude.data[i] {
                magnitude.data[i] = d;
            }
            if lc[i] < curve.tau_high {
                masked.push(f64::from(d));
            }
        }
    }
    let masked_fraction = masked.len() as f64 / (4 * n) as f64;
    Ok(Displacement {
        heat_map: heat_map(&magnitude, HEAT_MAP_FULL_SCALE),
        masked_mean: pairwise_mean(&masked),
        masked_fraction,
        magnitude,
    })
}

/// Map a scalar field onto a dark-blue → teal → yellow ramp.
pub fn heat_map(values: &Plane, full_scale: f32) -> SrgbImage {
    const STOPS: [[f32; 3]; 3] = [[0.07, 0.04, 0.33], [0.13, 0.57, 0.55], [0.99, 0.91, 0.14]];
    let mut img = Image::new(values.width, values.height, 3);
    let n = values.data.len();
    for (i, &v) in values.data.iter().enumerate() {
        let t = (v / full_scale).clamp(0.0, 1.0) * 2.0;
        let (a, b, f) = if t <= 1.0 { (0, 1, t) } else { (1, 2, t - 1.0) };
        for (c, (lo, hi)) in STOPS[a].iter().zip(&STOPS[b]).enumerate() {
            img.data[c * n + i] = (lo + (hi - lo) * f).clamp(0.0, 1.0);
        }
    }
    SrgbImage { image: img }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScreenConfig {
    /// Reject when the masked mean displacement exceeds this.
    pub displacement_threshold: f64,
    /// Reject when more than this fraction of long-frame pixels is saturated.
    pub saturation_cap: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            displacement_threshold: 0.02,
            saturation_cap: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Motion,
    WrongExposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScreenReport {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub masked_mean_displacement: f64,
    pub saturated_fraction: f64,
}

/// Automated stand-in for manual pair curation: flags motion between the two
/// exposures and badly over-exposed captures.
pub fn screen_pair(
    pair: &StaggeredPair<PackedRaw>,
    gains: WbGains,
    curve: &MergeCurve,
    config: &ScreenConfig,
) -> Result<ScreenReport> {
    let disp = displacement_map(pair, gains, curve)?;
    let (l, _) = pair.balanced(gains)?;
    let n = l.image.pixels();
    let saturated = (0..n)
        .filter(|&i| (0..4).any(|c| l.image.channel(c)[i] >= curve.tau_high))
        .count();
    let saturated_fraction = saturated as f64 / n as f64;
    let reason = if saturated_fraction > config.saturation_cap {
        Some(RejectReason::WrongExposed)
    } else if disp.masked_mean > config.displacement_threshold {
        Some(RejectReason::Motion)
    } else {
        None
    };
    Ok(ScreenReport {
        accepted: reason.is_none(),
        reason,
        masked_mean_displacement: disp.masked_mean,
        saturated_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw::PackedRaw;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn px(v: f32, t: f64) -> PackedRaw {
        PackedRaw::new(Image::filled(1, 1, 4, v), t).unwrap()
    }

    fn pair(l: f32, s: f32, t_long: f64, t_short: f64) -> StaggeredPair<PackedRaw> {
        StaggeredPair::raw(px(l, t_long), px(s, t_short)).unwrap()
    }

    #[test]
    fn curve_shape() {
        let c = MergeCurve::default();
        assert_eq!(c.w_long(0.5), 1.0);
        assert_eq!(c.w_long(0.97), 0.0);
        assert_eq!(c.w_long(1.0), 0.0);
        assert_abs_diff_eq!(c.w_long(0.91), 0.5, epsilon = 1e-6);
        assert!(MergeCurve::new(0.9, 0.9).is_err());
        assert!(MergeCurve::new(-0.1, 0.9).is_err());
    }

    #[test]
    fn merge_raw_examples() {
        let c = MergeCurve::default();
        let h = merge_raw(&pair(0.8, 0.1, 8.0, 1.0), &c, WbGains::UNIT).unwrap();
        assert_abs_diff_eq!(h.image.data[0], 0.1, epsilon = 1e-7);

        let h = merge_raw(&pair(1.0, 0.5, 8.0, 1.0), &c, WbGains::UNIT).unwrap();
        assert_eq!(h.image.data, vec![0.5; 4]);

        let mid = (c.tau_low + c.tau_high) / 2.0;
        let h = merge_raw(&pair(mid, 0.2, 8.0, 1.0), &c, WbGains::UNIT).unwrap();
        let expected = 0.5 * (mid / 8.0) + 0.5 * 0.2;
        assert_abs_diff_eq!(h.image.data[0], expected, epsilon = 1e-6);
        assert_eq!(h.layout, Layout::Raw4);
    }

    #[test]
    fn merge_raw_errors() {
        let c = MergeCurve::default();
        assert!(merge_raw(&pair(0.5, 0.5, 1.0, 1.0), &c, WbGains::UNIT).is_err());
        let bad = StaggeredPair {
            long: px(0.5, 8.0),
            short: PackedRaw::new(Image::filled(2, 1, 4, 0.1), 1.0).unwrap(),
            t_long: 8.0,
            t_short: 1.0,
        };
        assert!(matches!(
            merge_raw(&bad, &c, WbGains::UNIT),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn srgb_px(v: f32) -> SrgbImage {
        SrgbImage::new(Image::filled(1, 1, 3, v)).unwrap()
    }

    #[test]
    fn merge_srgb_examples() {
        let c = MergeCurve::default();
        // Identical static pair: display values chosen so both estimate the same radiance.
        let lin = 0.04f32;
        let long = Transfer::Srgb.encode(lin * 8.0);
        let short = Transfer::Srgb.encode(lin);
        let p = StaggeredPair::srgb(srgb_px(long), srgb_px(short), 8.0, 1.0).unwrap();
        let h = merge_srgb(&p, &c, Transfer::Srgb).unwrap();
        assert_abs_diff_eq!(h.image.data[0], lin, epsilon = 1e-5);
        assert_eq!(h.layout, Layout::Rgb3);

        let p = StaggeredPair::srgb(srgb_px(1.0), srgb_px(0.6), 8.0, 1.0).unwrap();
        let h = merge_srgb(&p, &c, Transfer::Srgb).unwrap();
        assert_eq!(h.image.data[0], Transfer::Srgb.decode(0.6));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(v in 0.0f32..=1.0) {
            let c = MergeCurve::default();
            prop_assert_eq!(c.w_long(v) + c.w_short(v), 1.0);
        }

        #[test]
        fn merge_srgb_lies_between_estimates(l in 0.0f32..=1.0, s in 0.0f32..=1.0) {
            let c = MergeCurve::default();
            let p = StaggeredPair::srgb(srgb_px(l), srgb_px(s), 8.0, 1.0).unwrap();
            let h = merge_srgb(&p, &c, Transfer::Srgb).unwrap().image.data[0];
            let a = Transfer::Srgb.decode(l) / 8.0;
            let b = Transfer::Srgb.decode(s);
            prop_assert!(h >= a.min(b) - 1e-6 && h <= a.max(b) + 1e-6);
        }

        #[test]
        fn merge_raw_homogeneous_in_exposure_scale(l in 0.0f32..=1.0, s in 0.0f32..=1.0, k in 0.1f64..10.0) {
            let c = MergeCurve::default();
            let h1 = merge_raw(&pair(l, s, 8.0, 1.0), &c, WbGains::UNIT).unwrap().image.data[0];
            let hk = merge_raw(&pair(l, s, 8.0 * k, k), &c, WbGains::UNIT).unwrap().image.data[0];
            prop_assert!((h1 - hk * k as f32).abs() <= 1e-5 * h1.max(1.0));
        }
    }

    #[test]
    fn displacement_examples() {
        let c = MergeCurve::default();
        let same = StaggeredPair::raw(px(0.4, 1.0), px(0.4, 1.0)).unwrap();
        let d = displacement_map(&same, WbGains::UNIT, &c).unwrap();
        assert_eq!(d.magnitude.data, vec![0.0]);
        assert_eq!(d.masked_mean, 0.0);

        let clipped = pair(1.0, 0.5, 8.0, 1.0);
        let d = displacement_map(&clipped, WbGains::UNIT, &c).unwrap();
        assert_eq!(d.magnitude.data, vec![0.0]);
        assert_eq!(d.masked_fraction, 0.0);
    }

    #[test]
    fn screen_rejects_overexposed() {
        let c = MergeCurve::default();
        let mut long = Image::filled(10, 1, 4, 0.4);
        for x in 0..6 {
            for ch in 0..4 {
                long.set(ch, x, 0, 1.0);
            }
        }
        let mut short = Image::filled(10, 1, 4, 0.05);
        for x in 0..6 {
            for ch in 0..4 {
                short.set(ch, x, 0, 0.3);
            }
        }
        let p = StaggeredPair::raw(PackedRaw::new(long, 8.0).unwrap(), PackedRaw::new(short, 1.0).unwrap()).unwrap();
        let r = screen_pair(&p, WbGains::UNIT, &c, &ScreenConfig::default()).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.reason, Some(RejectReason::WrongExposed));
        assert_abs_diff_eq!(r.saturated_fraction, 0.6);
    }
}
