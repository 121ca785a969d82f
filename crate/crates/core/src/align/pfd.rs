//! Pyramid flow-guided deformable alignment.
//!
//! At each scale the sampling offsets start from the flow estimate plus the
//! upsampled correction found at the coarser scale, are refined by block
//! search, and drive a center-tap deformable sample. The sampled result is
//! blended with the upsampled coarser result, then a final flow-free
//! refinement pass runs at the finest scale.

use super::deform::{
    deformable_sample, flow_to_offsets, refine_offsets, refine_offsets_among, Guide, OffsetField, TapWeights,
    CENTER_TAP, KERNEL_TAPS,
};
use super::flow::{FlowField, FlowPyramid};
use super::pyramid::{build_pyramid, crop, downsample, mask_pyramid, reflect_pad, upsample};
use super::AlignConfig;
use crate::error::{invalid, Error, Result};
use crate::image::Plane;

#[derive(Clone, Debug)]
pub struct Aligned {
    /// Warped neighbor channels, in input order.
    pub channels: Vec<Plane>,
    /// Warped neighbor guide.
    pub guide: Plane,
    /// Per-pixel confidence from the final refinement, in [0, 1].
    pub confidence: Plane,
    /// Final offsets at the finest scale.
    pub offsets: OffsetField,
}

fn guide_pyramid(g: &Guide, m: usize, levels: usize) -> Result<Vec<Guide>> {
    let values = build_pyramid(&reflect_pad(&g.values, m), levels)?;
    let masks = mask_pyramid(&g.valid, g.values.width, g.values.height, m, levels)?;
    Ok(values
        .into_iter()
        .zip(masks)
        .map(|(values, valid)| Guide { values, valid })
        .collect())
}

/// Keep the current scale's detail band; in the low band, pull toward the
/// upsampled coarser result where this scale's match was poor.
fn blend_with_coarser(current: &Plane, coarser_aligned: &Plane, modulation: &Plane, weight: f32) -> Plane {
    let (w, h) = (current.width, current.height);
    let coarse_up = upsample(coarser_aligned, w, h, 1.0);
    let own_low = upsample(&downsample(current), w, h, 1.0);
    let data = current
        .data
        .iter()
        .zip(&modulation.data)
        .zip(coarse_up.data.iter().zip(&own_low.data))
        .map(|((&c, &m), (&u, &l))| c + weight * (1.0 - m) * (u - l))
        .collect();
    Plane {
        width: w,
        height: h,
        data,
    }
}

fn sub(a: &FlowField, b: &FlowField) -> FlowField {
    let d = |x: &Plane, y: &Plane| Plane {
        width: x.width,
        height: x.height,
        data: x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect(),
    };
    FlowField {
        dx: d(&a.dx, &b.dx),
        dy: d(&a.dy, &b.dy),
    }
}

/// Align `neighbor` channels (and its guide) to the reference guide.
pub fn align_pyramid(
    neighbor: &[Plane],
    neighbor_guide: &Guide,
    reference_guide: &Guide,
    flow: &FlowPyramid,
    cfg: &AlignConfig,
) -> Result<Aligned> {
    cfg.validate()?;
    let (w, h) = (reference_guide.values.width, reference_guide.values.height);
    if !neighbor_guide.values.same_size(&reference_guide.values)
        || neighbor.iter().any(|p| p.width != w || p.height != h)
    {
        return Err(Error::DimensionMismatch("alignment inputs differ in size".into()));
    }
    if flow.width != w || flow.height != h {
        return Err(Error::DimensionMismatch(format!(
            "flow pyramid is for {}x{}, frames are {w}x{h}",
            flow.width, flow.height
        )));
    }
    let flow_levels = flow.levels.len();
    if cfg.levels > flow_levels {
        return Err(invalid(format!(
            "{} alignment levels need at least as many flow levels, got {flow_levels}",
            cfg.levels
        )));
    }
    let m = 1usize << (flow_levels - 1);
    let levels = cfg.levels;

    let nb_guides = guide_pyramid(neighbor_guide, m, levels)?;
    let rf_guides = guide_pyramid(reference_guide, m, levels)?;
    // Plane 0 is the guide, the rest are the caller's channels.
    let mut sources: Vec<Vec<Plane>> = Vec::with_capacity(neighbor.len() + 1);
    sources.push(nb_guides.iter().map(|g| g.values.clone()).collect());
    for p in neighbor {
        sources.push(build_pyramid(&reflect_pad(p, m), levels)?);
    }
    let (pw, ph) = (rf_guides[0].values.width, rf_guides[0].values.height);
    if flow.levels[0].width() != pw || flow.levels[0].height() != ph {
        return Err(Error::DimensionMismatch(
            "flow pyramid padding does not match frames".into(),
        ));
    }

    let center = TapWeights::center(KERNEL_TAPS);
    let mut correction: Option<FlowField> = None;
    let mut aligned: Option<Vec<Plane>> = None;
    let mut finest_offsets: Option<OffsetField> = None;
    for s in (0..levels).rev() {
        let (sw, sh) = (rf_guides[s].values.width, rf_guides[s].values.height);
        let f = if cfg.use_flow {
            flow.levels[s].clone()
        } else {
            FlowField::zeros(sw, sh)
        };
        let base_flow = match &correction {
            Some(c) => f.add(&c.upsample2(sw, sh)),
            None => f.clone(),
        };
        let base = flow_to_offsets(&base_flow);
        let offsets = if cfg.use_refinement {
            // The flow alone competes with the propagated correction so a
            // bad coarse residual is not amplified down the pyramid; it also
            // wins ties and is kept where nothing can be matched.
            let plain = flow_to_offsets(&f);
            refine_offsets_among(&nb_guides[s], &rf_guides[s], &[&plain, &base], &cfg.refine)?
        } else {
            base
        };
        correction = Some(sub(&offsets.center_flow(), &f));
        let unit = offsets.with_unit_modulation();
        let sampled = sources
            .iter()
            .map(|pyr| deformable_sample(&pyr[s], &unit, &center))
            .collect::<Result<Vec<_>>>()?;
        // Unobservable (saturated) pixels have floor modulation without the
        // match having failed, so they keep this scale's sample.
        let mut modulation = offsets.center_modulation();
        for (m, &v) in modulation.data.iter_mut().zip(&rf_guides[s].valid) {
            if !v {
                *m = 1.0;
            }
        }
        aligned = Some(match aligned.take() {
            None => sampled,
            Some(coarser) => sampled
                .iter()
                .zip(&coarser)
                .map(|(cur, c)| blend_with_coarser(cur, c, &modulation, cfg.coarse_blend))
                .collect(),
        });
        if s == 0 {
            finest_offsets = Some(offsets);
        }
    }
    let mut planes = aligned.expect("at least one level");
    let mut offsets = finest_offsets.expect("finest level visited");

    let confidence = if cfg.use_refinement {
        let valid = {
            let g = &nb_guides[0];
            let mut v = Vec::with_capacity(pw * ph);
            for y in 0..ph {
                for x in 0..pw {
                    let (ox, oy) = offsets.offset(CENTER_TAP, x, y);
                    let sx = ((x as f32 + ox).round() as isize).clamp(0, pw as isize - 1) as usize;
                    let sy = ((y as f32 + oy).round() as isize).clamp(0, ph as isize - 1) as usize;
                    v.push(g.valid[sy * pw + sx]);
                }
            }
            v
        };
        let warped = Guide {
            values: planes[0].clone(),
            valid,
        };
        let cascade = refine_offsets(
            &warped,
            &rf_guides[0],
            &flow_to_offsets(&FlowField::zeros(pw, ph)),
            &cfg.refine,
        )?;
        let unit = cascade.with_unit_modulation();
        planes = planes
            .iter()
            .map(|p| deformable_sample(p, &unit, &center))
            .collect::<Result<Vec<_>>>()?;
        let step = cascade.center_flow();
        let n = pw * ph;
        for k in 0..offsets.taps {
            for i in 0..n {
                offsets.dx[k * n + i] += step.dx.data[i];
                offsets.dy[k * n + i] += step.dy.data[i];
            }
        }
        offsets.modulation = cascade.modulation;
        cascade_confidence(&offsets)
    } else {
        Plane::filled(pw, ph, 1.0)
    };

    let guide = crop(&planes[0], w, h);
    let channels = planes[1..].iter().map(|p| crop(p, w, h)).collect();
    Ok(Aligned {
        channels,
        guide,
        confidence: crop(&confidence, w, h),
        offsets: crop_offsets(&offsets, w, h),
    })
}

fn cascade_confidence(offsets: &OffsetField) -> Plane {
    offsets.center_modulation()
}

fn crop_offsets(o: &OffsetField, w: usize, h: usize) -> OffsetField {
    if o.width == w && o.height == h {
        return o.clone();
    }
    let n = w * h * o.taps;
    let mut out = OffsetField {
        width: w,
        height: h,
        taps: o.taps,
        dx: Vec::with_capacity(n),
        dy: Vec::with_capacity(n),
        modulation: Vec::with_capacity(n),
    };
    for k in 0..o.taps {
        for y in 0..h {
            let start = (k * o.height + y) * o.width;
            out.dx.extend_from_slice(&o.dx[start..start + w]);
            out.dy.extend_from_slice(&o.dy[start..start + w]);
            out.modulation.extend_from_slice(&o.modulation[start..start + w]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::flow::estimate_flow;

    fn texture(x: f32, y: f32) -> f32 {
        0.45 + 0.2 * (0.31 * x + 0.17 * y).sin()
            + 0.15 * (0.11 * x - 0.23 * y).cos()
            + 0.08 * (0.6 * x + 0.45 * y).sin()
    }

    #[test]
    fn identical_inputs_are_identity() {
        let p = Plane::from_fn(40, 40, |x, y| texture(x as f32, y as f32));
        let g = Guide::all_valid(p.clone());
        let cfg = AlignConfig::default();
        let flow = estimate_flow(&p, &p, &cfg.flow).unwrap();
        let out = align_pyramid(std::slice::from_ref(&p), &g, &g, &flow, &cfg).unwrap();
        assert_eq!(out.channels[0], p);
        assert_eq!(out.guide, p);
        assert!(out.confidence.data.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn global_shift_is_aligned() {
        let (w, h) = (96, 96);
        let rf = Plane::from_fn(w, h, |x, y| texture(x as f32, y as f32));
        let nb = Plane::from_fn(w, h, |x, y| texture(x as f32 - 3.0, y as f32));
        let cfg = AlignConfig::default();
        let flow = estimate_flow(&nb, &rf, &cfg.flow).unwrap();
        let out = align_pyramid(
            std::slice::from_ref(&nb),
            &Guide::all_valid(nb.clone()),
            &Guide::all_valid(rf.clone()),
            &flow,
            &cfg,
        )
        .unwrap();
        let mut se = 0.0f64;
        let mut n = 0;
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                let d = f64::from(out.channels[0].get(x, y) - rf.get(x, y));
                se += d * d;
                n += 1;
            }
        }
        let psnr = 10.0 * (1.0 / (se / n as f64)).log10();
        assert!(psnr >= 40.0, "psnr {psnr}");
    }

    #[test]
    fn rejects_mismatched_flow() {
        let p = Plane::filled(32, 32, 0.5);
        let g = Guide::all_valid(p.clone());
        let flow = FlowPyramid::zeros(16, 16, 5);
        assert!(align_pyramid(&[p], &g, &g, &flow, &AlignConfig::default()).is_err());
    }
}
