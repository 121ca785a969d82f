//! Synthetic alternating-exposure LDR sequences from HDR frames, and
//! procedural HDR test scenes with known motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::align::FlowField;
use crate::error::{invalid, Error, Result};
use crate::image::{Image, Plane};
use crate::isp::srgb_oetf;
use crate::raw::{Layout, RadianceImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Raw,
    Srgb,
}

impl Domain {
    pub fn layout(self) -> Layout {
        match self {
            Domain::Raw => Layout::Raw4,
            Domain::Srgb => Layout::Rgb3,
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Domain::Raw),
            "srgb" => Ok(Domain::Srgb),
            other => Err(invalid(format!("unknown domain {other:?}; expected raw or srgb"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Cycled over the frames: frame i uses `exposure_times[i % len]`.
    pub exposure_times: Vec<f64>,
    pub bit_depth: u32,
    /// Noise variance is drawn once per sequence, uniformly from this range.
    pub noise_variance: [f64; 2],
    /// Tone exponent `exp(d)` range; applied per frame in the sRGB domain.
    pub tone_d: [f64; 2],
    pub seed: u64,
    pub domain: Domain,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            exposure_times: vec![1.0, 8.0],
            bit_depth: 10,
            noise_variance: [1e-3, 3e-3],
            tone_d: [-0.7, 0.7],
            seed: 0,
            domain: Domain::Raw,
        }
    }
}

impl SynthConfig {
    /// No noise and no tone perturbation.
    pub fn noiseless(mut self) -> Self {
        self.noise_variance = [0.0, 0.0];
        self.tone_d = [0.0, 0.0];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.exposure_times.is_empty() || !self.exposure_times.iter().all(|t| t.is_finite() && *t > 0.0) {
            return Err(invalid("exposure times must be a non-empty list of positive values"));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(invalid(format!("bit depth must be in 1..=16, got {}", self.bit_depth)));
        }
        let [lo, hi] = self.noise_variance;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("noise variance range must satisfy 0 <= lo <= hi"));
        }
        if !(lo >= 1e-3 && hi <= 3e-3) && hi > 0.0 {
            log::debug!("noise variance range [{lo}, {hi}] differs from the default [1e-3, 3e-3]");
        }
        let [dl, dh] = self.tone_d;
        if !(dl.is_finite() && dh.is_finite() && dl <= dh) {
            return Err(invalid("tone range must satisfy lo <= hi"));
        }
        Ok(())
    }

    pub fn exposure_at(&self, i: usize) -> f64 {
        self.exposure_times[i % self.exposure_times.len()]
    }

    fn max_exposure(&self) -> f64 {
        self.exposure_times.iter().copied().fold(0.0, f64::max)
    }
}

fn quantize(v: f64, bit_depth: Option<u32>) -> f32 {
    match bit_depth {
        Some(b) => {
            let m = f64::from((1u32 << b) - 1);
            ((v * m + 0.5).floor() / m) as f32
        }
        None => v as f32,
    }
}

/// Expose, add Gaussian noise, clip to [0, 1] and quantize. `bit_depth`
/// `None` skips quantization.
pub fn hdr_to_ldr(
    hdr: &Image,
    exposure_time: f64,
    bit_depth: Option<u32>,
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<Image> {
    if !(exposure_time.is_finite() && exposure_time > 0.0) {
        return Err(invalid(format!("exposure time must be positive, got {exposure_time}")));
    }
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(invalid("noise variance must be non-negative"));
    }
    if let Some((index, &value)) = hdr
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(Error::ValueOutOfRange { index, value });
    }
    let normal = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut out = hdr.clone();
    for v in out.data.iter_mut() {
        let mut x = f64::from(*v) * exposure_time;
        if noise_variance > 0.0 {
            x += normal.sample(rng);
        }
        *v = quantize(x.clamp(0.0, 1.0), bit_depth);
    }
    Ok(out)
}

/// `v ← v^exp(d)`.
pub fn perturb_tone(img: &Image, d: f64) -> Result<Image> {
    if !d.is_finite() {
        return Err(invalid("tone exponent must be finite"));
    }
    if d.abs() > 0.7 {
        log::warn!("tone perturbation d = {d} is outside [-0.7, 0.7]");
    }
    if let Some((index, &value)) = img.data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::ValueOutOfRange { index, value });
    }
    let g = d.exp();
    Ok(img.map(|v| f64::from(v).powf(g) as f32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ExposureRole {
    Long,
    Short,
}

#[derive(Clone, Debug)]
pub struct SynthFrame {
    /// Normalized, quantized LDR values: packed raw planes or sRGB-encoded.
    pub ldr: Image,
    pub exposure_time: f64,
    pub role: ExposureRole,
    pub tone_d: f64,
}

#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub frames: Vec<SynthFrame>,
    pub ground_truth: Vec<RadianceImage>,
    pub noise_variance: f64,
    pub config: SynthConfig,
}

/// Stream reserved for per-sequence draws; frame `i` uses stream `i`.
const SEQUENCE_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Render every HDR frame at its alternating exposure. Raw frames stay
/// linear; sRGB frames are encoded and tone perturbed before quantization.
pub fn synth_sequence(hdr: &[RadianceImage], cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    if hdr.len() < 3 {
        return Err(invalid(format!("need at least 3 HDR frames, got {}", hdr.len())));
    }
    let layout = cfg.domain.layout();
    for (i, f) in hdr.iter().enumerate() {
        f.expect_layout(layout)
            .map_err(|e| invalid(format!("frame {i}: {e}")))?;
        f.image.ensure_same_shape(&hdr[0].image, "HDR frames")?;
    }
    let noise_variance = draw(&mut stream_rng(cfg.seed, SEQUENCE_STREAM), cfg.noise_variance);
    let t_max = cfg.max_exposure();
    let frames = hdr
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = stream_rng(cfg.seed, i as u64);
            let t = cfg.exposure_at(i);
            let role = if t == t_max {
                ExposureRole::Long
            } else {
                ExposureRole::Short
            };
            let (ldr, tone_d) = match cfg.domain {
                Domain::Raw => (
                    hdr_to_ldr(&h.image, t, Some(cfg.bit_depth), noise_variance, &mut rng)?,
                    0.0,
                ),
                Domain::Srgb => {
                    let linear = hdr_to_ldr(&h.image, t, None, noise_variance, &mut rng)?;
                    let d = draw(&mut rng, cfg.tone_d);
                    let toned = perturb_tone(&linear.map(srgb_oetf), d)?;
                    (toned.map(|v| quantize(f64::from(v), Some(cfg.bit_depth))), d)
                }
            };
            Ok(SynthFrame {
                ldr,
                exposure_time: t,
                role,
                tone_d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthSequence {
        frames,
        ground_truth: hdr.to_vec(),
        noise_variance,
        config: cfg.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneKind {
    Static,
    /// Whole frame translates by `(dx, dy)` per frame.
    GlobalShift {
        dx: f32,
        dy: f32,
    },
    /// Left and right halves translate independently; the boundary is fixed.
    TwoMotion {
        left: [f32; 2],
        right: [f32; 2],
    },
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(SceneKind::Static),
            "global-shift" => Ok(SceneKind::GlobalShift { dx: 3.0, dy: 0.0 }),
            "two-motion" => Ok(SceneKind::TwoMotion {
                left: [4.0, 0.0],
                right: [0.0, 4.0],
            }),
            other => Err(invalid(format!(
                "unknown scene kind {other:?}; expected static, global-shift or two-motion"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub layout: Layout,
    pub min_radiance: f32,
    pub max_radiance: f32,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            width: 256,
            height: 256,
            frames: 5,
            layout: Layout::Raw4,
            min_radiance: 0.02,
            max_radiance: 0.8,
            seed: 0,
        }
    }
}

/// A rendered scene plus the analytic motion that produced it.
#[derive(Clone, Debug)]
pub struct TestScene {
    pub kind: SceneKind,
    pub frames: Vec<RadianceImage>,
    pub params: SceneParams,
}

impl TestScene {
    fn velocity(&self, x: usize) -> [f32; 2] {
        match self.kind {
            SceneKind::Static => [0.0, 0.0],
            SceneKind::GlobalShift { dx, dy } => [dx, dy],
            SceneKind::TwoMotion { left, right } => {
                if x < self.params.width / 2 {
                    left
                } else {
                    right
                }
            }
        }
    }

    /// Flow with `frame[to](p + F(p)) = frame[from](p)` wherever the
    /// displaced point stays in the same motion region.
    pub fn flow_between(&self, from: usize, to: usize) -> FlowField {
        let k = to as f32 - from as f32;
        let (w, h) = (self.params.width, self.params.height);
        FlowField {
            dx: Plane::from_fn(w, h, |x, _| k * self.velocity(x)[0]),
            dy: Plane::from_fn(w, h, |x, _| k * self.velocity(x)[1]),
        }
    }

    /// True where `p` and `p + flow_between(from, to)` lie in the same region.
    pub fn region_consistent(&self, from: usize, to: usize, x: usize, y: usize) -> bool {
        let f = self.flow_between(from, to);
        let tx = x as f32 + f.dx.get(x, y);
        let ty = y as f32 + f.dy.get(x, y);
        let (w, h) = (self.params.width as f32, self.params.height as f32);
        if !(0.0..w).contains(&tx) || !(0.0..h).contains(&ty) {
            return false;
        }
        match self.kind {
            SceneKind::TwoMotion { .. } => (x < self.params.width / 2) == ((tx as usize) < self.params.width / 2),
            _ => true,
        }
    }
}

/// Smooth multi-scale pattern in [0, 1], distinct per region and channel.
struct Texture {
    waves: Vec<[f32; 4]>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..6)
            .map(|i| {
                let period = 12.0 + 10.0 * i as f32 + rng.random_range(0.0..6.0);
                let angle = rng.random_range(0.0..std::f32::consts::TAU);
                let k = std::f32::consts::TAU / period;
                [
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.random_range(0.0..std::f32::consts::TAU),
                    1.0,
                ]
            })
            .collect();
        Texture { waves }
    }

    fn eval(&self, x: f32, y: f32) -> f32 {
        let s: f32 = self
            .waves
            .iter()
            .map(|w| w[3] * (w[0] * x + w[1] * y + w[2]).sin())
            .sum();
        (0.5 + 0.5 * s / self.waves.len() as f32 * 2.0).clamp(0.0, 1.0)
    }
}

/// Procedural radiance frames with analytically known motion.
pub fn render_test_scene(kind: SceneKind, params: &SceneParams) -> Result<TestScene> {
    if params.width < 2 || params.height < 2 || params.frames == 0 {
        return Err(invalid("scene needs at least 2x2 pixels and one frame"));
    }
    if !(params.min_radiance > 0.0 && params.max_radiance > params.min_radiance) {
        return Err(invalid("radiance range must satisfy 0 < min < max"));
    }
    let mut rng = stream_rng(params.seed, 0);
    let textures = [Texture::new(&mut rng), Texture::new(&mut rng)];
    let channels = params.layout.channels();
    let tint: Vec<f32> = (0..channels).map(|_| rng.random_range(0.85..1.0)).collect();
    let (lo, hi) = (params.min_radiance.ln(), params.max_radiance.ln());
    let scene = TestScene {
        kind,
        frames: Vec::new(),
        params: *params,
    };
    let frames = (0..params.frames)
        .into_par_iter()
        .map(|k| {
            let mut planes = Vec::with_capacity(channels);
            for (c, &tc) in tint.iter().enumerate() {
                planes.push(Plane::from_fn(params.width, params.height, |x, y| {
                    let [vx, vy] = scene.velocity(x);
                    let region = usize::from(matches!(kind, SceneKind::TwoMotion { .. }) && x >= params.width / 2);
                    let sx = x as f32 - k as f32 * vx;
                    let sy = y as f32 - k as f32 * vy;
                    let base = textures[region].eval(sx + 0.7 * c as f32, sy);
                    (lo + (hi - lo) * base).exp() * tc
                }));
            }
            RadianceImage::new(Image::from_planes(&planes)?, params.layout)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestScene { frames, ..scene })
}
