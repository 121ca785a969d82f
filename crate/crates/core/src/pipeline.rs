//! File-level drivers behind the command-line tool. Each one reads inputs,
//! runs a pipeline stage and writes its outputs plus a JSON report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{pairwise_mean, Image};
use crate::io::{
    read_radiance, write_json, write_png16, write_png8, write_radiance, write_raw_frame, Calibration, FrameRecord,
    Provenance, SequenceManifest, SCHEMA_VERSION,
};
use crate::isp::{IspConfig, Transfer};
use crate::merge::{
    displacement_map, merge_raw, merge_srgb, screen_pair, MergeCurve, ScreenConfig, ScreenReport, StaggeredPair,
};
use crate::metrics::{evaluate, mu_tonemap, Metric, MetricReport, TonemapParams};
use crate::raw::{max_code, pack_bayer, unpack_bayer, white_balance, Layout, PackedRaw, RadianceImage, SrgbImage};
use crate::reconstruct::{reconstruct_video, FrameStats, ReconstructConfig};
use crate::synth::{render_test_scene, synth_sequence, Domain, ExposureRole, SceneKind, SceneParams, SynthConfig};

/// Output name of frame `i`, shared by ground truth and predictions.
pub fn frame_name(i: usize, ext: &str) -> String {
    format!("frame_{i:04}.{ext}")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Packed raw frame `i` of a raw manifest, exposure with gain folded in.
fn packed_frame(m: &SequenceManifest, i: usize) -> Result<PackedRaw> {
    let frame = m.raw_frame(i)?;
    let mut packed = pack_bayer(&frame)?;
    packed.exposure_time = frame.effective_exposure();
    Ok(packed)
}

fn isp_for(m: &SequenceManifest) -> IspConfig {
    IspConfig {
        ccm: m.calibration.ccm,
        ..IspConfig::default()
    }
}

/// Every frame as white-balanced linear LDR: packed raw planes, or sRGB
/// decoded through the inverse OETF.
pub fn load_linear_frames(m: &SequenceManifest) -> Result<Vec<Image>> {
    let domain = m.domain();
    (0..m.frames.len())
        .into_par_iter()
        .map(|i| match domain {
            Domain::Raw => {
                let gains = m.calibration.wb_gains.unwrap_or_default();
                Ok(white_balance(&packed_frame(m, i)?, gains)?.image)
            }
            Domain::Srgb => Ok(m.srgb_frame(i)?.map(|v| Transfer::Srgb.decode(v))),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PairRecord {
    pub pair: usize,
    pub long_index: usize,
    pub short_index: usize,
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_gt: Option<String>,
    pub srgb_gt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub displacement_map: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_mean_displacement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MergeGtReport {
    pub scene: String,
    pub domain: Domain,
    pub pairs: Vec<PairRecord>,
}

/// Consecutive records `(2k, 2k + 1)` form staggered pair `k`; returns
/// `(long, short)` indices.
pub fn staggered_pairs(m: &SequenceManifest) -> Result<Vec<(usize, usize)>> {
    if !m.frames.len().is_multiple_of(2) {
        return Err(invalid(format!(
            "staggered capture needs an even number of frames, got {}",
            m.frames.len()
        )));
    }
    (0..m.frames.len() / 2)
        .map(|k| {
            let (a, b) = (2 * k, 2 * k + 1);
            match (m.frames[a].role, m.frames[b].role) {
                (ExposureRole::Long, ExposureRole::Short) => Ok((a, b)),
                (ExposureRole::Short, ExposureRole::Long) => Ok((b, a)),
                _ => Err(invalid(format!("frames {a} and {b} do not form a long/short pair"))),
            }
        })
        .collect()
}

/// Merge every staggered pair into raw and sRGB ground truth, with a
/// displacement heat map per raw pair.
pub fn merge_gt(m: &SequenceManifest, out: &Path, curve: &MergeCurve) -> Result<MergeGtReport> {
    curve.validate()?;
    let pairs = staggered_pairs(m)?;
    create_dir(out)?;
    let isp = isp_for(m);
    let records = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(li, si))| -> Result<PairRecord> {
            let srgb_name = format!("gt_srgb_{k:04}.pfm");
            let mut rec = PairRecord {
                pair: k,
                long_index: li,
                short_index: si,
                ratio: m.frames[li].effective_exposure() / m.frames[si].effective_exposure(),
                raw_gt: None,
                srgb_gt: srgb_name.clone(),
                displacement_map: None,
                masked_mean_displacement: None,
            };
            match m.domain() {
                Domain::Raw => {
                    let gains = m.calibration.wb_gains.unwrap_or_default();
                    let pair = StaggeredPair::raw(packed_frame(m, li)?, packed_frame(m, si)?)?;
                    let raw = merge_raw(&pair, curve, gains)?;
                    let raw_name = format!("gt_raw_{k:04}.pfm");
                    write_radiance(&out.join(&raw_name), &raw, Some(&m.calibration))?;
                    write_radiance(&out.join(&srgb_name), &isp.process(&raw)?, None)?;
                    let disp = displacement_map(&pair, gains, curve)?;
                    let disp_name = format!("displacement_{k:04}.png");
                    write_png8(&out.join(&disp_name), &disp.heat_map.image)?;
                    rec.raw_gt = Some(raw_name);
                    rec.displacement_map = Some(disp_name);
                    rec.masked_mean_displacement = Some(disp.masked_mean);
                }
                Domain::Srgb => {
                    let long = SrgbImage::new(m.srgb_frame(li)?)?;
                    let short = SrgbImage::new(m.srgb_frame(si)?)?;
                    let pair = StaggeredPair::srgb(
                        long,
                        short,
                        m.frames[li].effective_exposure(),
                        m.frames[si].effective_exposure(),
                    )?;
                    write_radiance(&out.join(&srgb_name), &merge_srgb(&pair, curve, Transfer::Srgb)?, None)?;
                }
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MergeGtReport {
        scene: m.scene.clone(),
        domain: m.domain(),
        pairs: records,
    };
    write_json(&out.join("merge_gt.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScreenedPair {
    pub pair: usize,
    pub long_index: usize,
    pub short_index: usize,
    #[serde(flatten)]
    pub report: ScreenReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ScreenSummary {
    pub scene: String,
    pub accepted: usize,
    pub rejected: usize,
    pub pairs: Vec<ScreenedPair>,
}

/// Screen every staggered pair of a raw manifest.
pub fn screen(m: &SequenceManifest, curve: &MergeCurve, cfg: &ScreenConfig) -> Result<ScreenSummary> {
    if m.domain() != Domain::Raw {
        return Err(invalid("pair screening needs a raw manifest"));
    }
    let gains = m.calibration.wb_gains.unwrap_or_default();
    let pairs = staggered_pairs(m)?
        .par_iter()
        .enumerate()
        .map(|(k, &(li, si))| {
            let pair = StaggeredPair::raw(packed_frame(m, li)?, packed_frame(m, si)?)?;
            Ok(ScreenedPair {
                pair: k,
                long_index: li,
                short_index: si,
                report: screen_pair(&pair, gains, curve, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accepted = pairs.iter().filter(|p| p.report.accepted).count();
    Ok(ScreenSummary {
        scene: m.scene.clone(),
        accepted,
        rejected: pairs.len() - accepted,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ReconstructReport {
    pub scene: String,
    pub domain: Domain,
    pub outputs: Vec<String>,
    /// Input indices without a full window.
    pub skipped: Vec<usize>,
}

/// Reconstruct every interior frame. Outputs are `frame_NNNN.pfm` named
/// by input index, plus `stats.jsonl`. `domain` picks raw4 or RGB output;
/// raw input is taken to RGB through the ISP.
pub fn reconstruct_sequence(
    m: &SequenceManifest,
    out: &Path,
    domain: Domain,
    cfg: &ReconstructConfig,
) -> Result<ReconstructReport> {
    if m.domain() == Domain::Srgb && domain == Domain::Raw {
        return Err(invalid("an sRGB sequence cannot be reconstructed to raw"));
    }
    let frames = load_linear_frames(m)?;
    let video = reconstruct_video(&frames, &m.effective_times(), cfg)?;
    create_dir(out)?;
    let isp = isp_for(m);
    let layout = m.domain().layout();
    let mut outputs = Vec::with_capacity(video.frames.len());
    let mut stats = String::new();
    for f in &video.frames {
        let hdr = RadianceImage::new(f.hdr.clone(), layout)?;
        let hdr = match (layout, domain) {
            (Layout::Raw4, Domain::Srgb) => isp.process(&hdr)?,
            _ => hdr,
        };
        let name = frame_name(f.index, "pfm");
        let cal = (hdr.layout == Layout::Raw4).then_some(&m.calibration);
        write_radiance(&out.join(&name), &hdr, cal)?;
        outputs.push(name);
        stats.push_str(&serde_json::to_string(&f.stats).expect("stats serialize"));
        stats.push('\n');
    }
    let stats_path = out.join("stats.jsonl");
    std::fs::write(&stats_path, stats).map_err(|e| Error::io(&stats_path, e))?;
    Ok(ReconstructReport {
        scene: m.scene.clone(),
        domain,
        outputs,
        skipped: video.skipped,
    })
}

/// Parse one line of `stats.jsonl`.
pub fn parse_stats_line(line: &str) -> Result<FrameStats> {
    serde_json::from_str(line).map_err(|e| invalid(format!("bad stats line: {e}")))
}

/// HDR PFMs of a directory in file-name order, sidecars skipped.
pub fn list_pfm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Render a synthetic sequence from HDR frames and write LDR frames, copies
/// of the ground truth and a manifest into `out`.
pub fn synth_to_dir(hdr: &[RadianceImage], cfg: &SynthConfig, scene: &str, out: &Path) -> Result<SequenceManifest> {
    let hdr: Vec<RadianceImage> = match cfg.domain {
        Domain::Raw => hdr.to_vec(),
        Domain::Srgb => hdr
            .iter()
            .map(|h| match h.layout {
                Layout::Raw4 => IspConfig::default().process(h),
                Layout::Rgb3 => Ok(h.clone()),
            })
            .collect::<Result<_>>()?,
    };
    let seq = synth_sequence(&hdr, cfg)?;
    let (frames_dir, gt_dir) = (out.join("frames"), out.join("gt"));
    create_dir(&frames_dir)?;
    create_dir(&gt_dir)?;
    let white = max_code(cfg.bit_depth) as u16;
    let calibration = match cfg.domain {
        Domain::Raw => Calibration::raw(cfg.bit_depth, 0, white, Default::default()),
        Domain::Srgb => Calibration::srgb(cfg.bit_depth),
    };
    let records = seq
        .frames
        .par_iter()
        .zip(&seq.ground_truth)
        .enumerate()
        .map(|(i, (f, gt))| {
            let path = match cfg.domain {
                Domain::Raw => {
                    let path = Path::new("frames").join(frame_name(i, "pgm"));
                    let packed = PackedRaw::new(f.ldr.clone(), f.exposure_time)?;
                    write_raw_frame(&out.join(&path), &unpack_bayer(&packed, cfg.bit_depth, 0, white)?)?;
                    path
                }
                Domain::Srgb => {
                    let path = Path::new("frames").join(frame_name(i, "png"));
                    write_png16(&out.join(&path), &f.ldr, cfg.bit_depth)?;
                    path
                }
            };
            let gt_path = Path::new("gt").join(frame_name(i, "pfm"));
            write_radiance(&out.join(&gt_path), gt, None)?;
            Ok(FrameRecord {
                path,
                exposure_time: f.exposure_time,
                analog_gain: 1.0,
                role: f.role,
                domain: cfg.domain,
                gt_path: Some(gt_path),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = SequenceManifest {
        schema_version: SCHEMA_VERSION,
        scene: scene.to_string(),
        frames: records,
        calibration,
        provenance: Some(Provenance {
            seed: cfg.seed,
            noise_var: seq.noise_variance,
            synth: Some(cfg.clone()),
        }),
        base_dir: out.to_path_buf(),
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// [`synth_to_dir`] over every HDR PFM of `hdr_dir`.
pub fn synth_from_dir(hdr_dir: &Path, cfg: &SynthConfig, out: &Path) -> Result<SequenceManifest> {
    let paths = list_pfm(hdr_dir)?;
    let hdr = paths.par_iter().map(|p| read_radiance(p)).collect::<Result<Vec<_>>>()?;
    let scene = hdr_dir
        .file_name()
        .map_or_else(|| "scene".to_string(), |s| s.to_string_lossy().into_owned());
    synth_to_dir(&hdr, cfg, &scene, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SceneReport {
    pub kind: SceneKind,
    pub params: SceneParams,
    pub outputs: Vec<String>,
}

/// Write a procedural test scene as HDR PFMs.
pub fn render_scene_to_dir(kind: SceneKind, params: &SceneParams, out: &Path) -> Result<SceneReport> {
    let scene = render_test_scene(kind, params)?;
    create_dir(out)?;
    let outputs = scene
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let name = frame_name(i, "pfm");
            write_radiance(&out.join(&name), f, None)?;
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SceneReport {
        kind,
        params: *params,
        outputs,
    };
    write_json(&out.join("scene.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FrameMetrics {
    pub name: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalReport {
    pub domain: Domain,
    pub mu: f64,
    pub frames: Vec<FrameMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_psnr_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_l1_mu: Option<f64>,
    /// Perceptual metrics that need external tools.
    pub external: Vec<String>,
}

fn to_domain(img: RadianceImage, domain: Domain, isp: &IspConfig) -> Result<Image> {
    match (img.layout, domain) {
        (Layout::Raw4, Domain::Srgb) => Ok(isp.process(&img)?.image),
        (Layout::Rgb3, Domain::Raw) => Err(invalid("raw-domain evaluation needs raw4 inputs")),
        _ => Ok(img.image),
    }
}

/// Score every prediction against the same-named ground truth.
pub fn eval_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    metrics: &[Metric],
    mu: f64,
    domain: Domain,
    isp: &IspConfig,
) -> Result<EvalReport> {
    let preds = list_pfm(pred_dir)?;
    if preds.is_empty() {
        return Err(invalid(format!("no PFM files in {}", pred_dir.display())));
    }
    let frames = preds
        .par_iter()
        .map(|p| {
            let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
            let gt_path = gt_dir.join(&name);
            if !gt_path.is_file() {
                let e = std::io::Error::new(std::io::ErrorKind::NotFound, format!("no ground truth for {name}"));
                return Err(Error::io(gt_path, e));
            }
            let pred = to_domain(read_radiance(p)?, domain, isp)?;
            let gt = to_domain(read_radiance(&gt_path)?, domain, isp)?;
            Ok(FrameMetrics {
                name,
                report: evaluate(&pred, &gt, mu, metrics)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&MetricReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = frames.iter().map(|m| f(&m.report)).collect();
        v.map(|v| pairwise_mean(&v))
    };
    Ok(EvalReport {
        domain,
        mu,
        mean_psnr_mu: mean(|r| r.psnr_mu),
        mean_l1_mu: mean(|r| r.l1_mu),
        frames,
        external: vec!["hdr_vdp2".into(), "hdr_vqm".into()],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PreviewReport {
    pub params: TonemapParams,
    pub clip_fraction: f64,
}

/// μ-law preview normalized by the image's own robust peak.
pub fn preview(pfm: &Path, png: &Path, mu: f64, isp: &IspConfig) -> Result<PreviewReport> {
    let img = to_domain(read_radiance(pfm)?, Domain::Srgb, isp)?;
    let params = TonemapParams::new(mu, crate::metrics::ground_truth_peak(&img)?)?;
    let t = mu_tonemap(&img, &params)?;
    let data = t.values.iter().map(|&v| v as f32).collect();
    write_png8(png, &Image::from_vec(img.width, img.height, img.channels, data)?)?;
    Ok(PreviewReport {
        params,
        clip_fraction: t.clip_fraction(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_manifest, LoadOptions};

    fn scene(frames: usize) -> Vec<RadianceImage> {
        let params = SceneParams {
            width: 32,
            height: 32,
            frames,
            ..SceneParams::default()
        };
        render_test_scene(SceneKind::Static, &params).unwrap().frames
    }

    #[test]
    fn synth_writes_loadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default().noiseless();
        synth_to_dir(&scene(4), &cfg, "s", dir.path()).unwrap();
        let m = load_manifest(&dir.path().join("manifest.json"), LoadOptions::default()).unwrap();
        assert_eq!(m.frames.len(), 4);
        assert_eq!(m.frames[1].role, ExposureRole::Long);
        let frames = load_linear_frames(&m).unwrap();
        assert_eq!(frames[0].channels, 4);
    }

    #[test]
    fn srgb_synth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            domain: Domain::Srgb,
            ..SynthConfig::default().noiseless()
        };
        synth_to_dir(&scene(3), &cfg, "s", dir.path()).unwrap();
        let m = load_manifest(&dir.path().join("manifest.json"), LoadOptions::default()).unwrap();
        assert_eq!(load_linear_frames(&m).unwrap()[0].channels, 3);
    }

    #[test]
    fn five_frames_give_three_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_to_dir(
            &scene(5),
            &SynthConfig::default().noiseless(),
            "s",
            &dir.path().join("in"),
        )
        .unwrap();
        let out = dir.path().join("out");
        let r = reconstruct_sequence(&m, &out, Domain::Raw, &ReconstructConfig::default()).unwrap();
        assert_eq!(r.outputs, vec!["frame_0001.pfm", "frame_0002.pfm", "frame_0003.pfm"]);
        let stats = std::fs::read_to_string(out.join("stats.jsonl")).unwrap();
        let idx: Vec<usize> = stats.lines().map(|l| parse_stats_line(l).unwrap().index).collect();
        assert_eq!(idx, vec![1, 2, 3]);
    }

    #[test]
    fn eval_of_ground_truth_is_capped() {
        let dir = tempfile::tempdir().unwrap();
        synth_to_dir(&scene(3), &SynthConfig::default().noiseless(), "s", dir.path()).unwrap();
        let gt = dir.path().join("gt");
        let r = eval_dirs(
            &gt,
            &gt,
            &[Metric::PsnrMu, Metric::L1Mu],
            5000.0,
            Domain::Srgb,
            &IspConfig::default(),
        )
        .unwrap();
        assert_eq!(r.mean_psnr_mu, Some(99.0));
        assert_eq!(r.mean_l1_mu, Some(0.0));
    }

    #[test]
    fn staggered_pairs_follow_roles() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_to_dir(&scene(4), &SynthConfig::default().noiseless(), "s", dir.path()).unwrap();
        assert_eq!(staggered_pairs(&m).unwrap(), vec![(1, 0), (3, 2)]);
        let r = merge_gt(&m, &dir.path().join("gt_out"), &MergeCurve::default()).unwrap();
        assert_eq!(r.pairs.len(), 2);
        assert!(dir.path().join("gt_out/displacement_0001.png").is_file());
    }
}
