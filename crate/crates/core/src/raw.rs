//! Raw, linear and display-referred image types and the exposure-domain
//! conversions between them.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// Color-filter-array layout of a mosaic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    Rggb,
    Grbg,
    Gbrg,
    Bggr,
}

impl BayerPattern {
    pub fn name(self) -> &'static str {
        match self {
            BayerPattern::Rggb => "RGGB",
            BayerPattern::Grbg => "GRBG",
            BayerPattern::Gbrg => "GBRG",
            BayerPattern::Bggr => "BGGR",
        }
    }
}

/// White-balance gains applied to (R, G, B); G is normally 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct WbGains(pub [f32; 3]);

impl WbGains {
    pub const UNIT: WbGains = WbGains([1.0, 1.0, 1.0]);

    pub fn r(&self) -> f32 {
        self.0[0]
    }
    pub fn g(&self) -> f32 {
        self.0[1]
    }
    pub fn b(&self) -> f32 {
        self.0[2]
    }

    /// Gain for each packed plane in (R, G1, G2, B) order.
    pub fn per_plane(&self) -> [f32; 4] {
        [self.0[0], self.0[1], self.0[1], self.0[2]]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.0.iter().enumerate() {
            if !(g.is_finite() && *g > 0.0) {
                return Err(invalid(format!("white-balance gain {i} must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

impl Default for WbGains {
    fn default() -> Self {
        WbGains::UNIT
    }
}

/// (dy, dx) mosaic offsets of the packed planes R, G1, G2, B for RGGB.
pub const PLANE_SITES: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// One captured raw mosaic with its exposure and calibration metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerFrame {
    pub width: usize,
    pub height: usize,
    pub pattern: BayerPattern,
    pub bit_depth: u32,
    pub black_level: u16,
    pub white_level: u16,
    /// Row-major samples, one per photosite.
    pub data: Vec<u16>,
    pub exposure_time: f64,
    pub analog_gain: f64,
    pub wb_gains: WbGains,
}

impl BayerFrame {
    /// Check every frame invariant.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::DimensionMismatch(format!(
                "Bayer frame must have even, non-zero dimensions, got {}x{}",
                self.width, self.height
            )));
        }
        if self.data.len() != self.width * self.height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} mosaic needs {} samples, got {}",
                self.width,
                self.height,
                self.width * self.height,
                self.data.len()
            )));
        }
        if !(1..=16).contains(&self.bit_depth) {
            return Err(invalid(format!("bit depth {} out of range 1..=16", self.bit_depth)));
        }
        if self.black_level >= self.white_level {
            return Err(invalid(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if u32::from(self.white_level) > max_code(self.bit_depth) {
            return Err(invalid(format!(
                "white level {} exceeds {}-bit range",
                self.white_level, self.bit_depth
            )));
        }
        if !(self.exposure_time.is_finite() && self.exposure_time > 0.0) {
            return Err(invalid(format!(
                "exposure time must be positive, got {}",
                self.exposure_time
            )));
        }
        self.wb_gains.validate()?;
        let max = max_code(self.bit_depth);
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, &s)| u32::from(s) > max) {
            return Err(Error::SampleOutOfRange {
                index,
                value,
                bit_depth: self.bit_depth,
            });
        }
        Ok(())
    }

    /// Exposure time with analog gain folded in; this is the `t` used for
    /// radiance normalization.
    pub fn effective_exposure(&self) -> f64 {
        self.exposure_time * self.analog_gain
    }
}

pub fn max_code(bit_depth: u32) -> u32 {
    (1u32 << bit_depth) - 1
}

/// Exposure-tagged half-resolution 4-plane linear raw image, planes in
/// (R, G1, G2, B) order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedRaw {
    pub image: Image,
    pub exposure_time: f64,
    pub white_balanced: bool,
}

impl PackedRaw {
    pub fn new(image: Image, exposure_time: f64) -> Result<Self> {
        if image.channels != 4 {
            return Err(Error::DimensionMismatch(format!(
                "packed raw needs 4 planes, got {}",
                image.channels
            )));
        }
        check_exposure(exposure_time)?;
        Ok(PackedRaw {
            image,
            exposure_time,
            white_balanced: false,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Raw4,
    Rgb3,
}

impl Layout {
    pub fn channels(self) -> usize {
        match self {
            Layout::Raw4 => 4,
            Layout::Rgb3 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Raw4 => "raw4",
            Layout::Rgb3 => "rgb3",
        }
    }
}

/// Exposure-normalized linear scene radiance.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceImage {
    pub image: Image,
    pub layout: Layout,
}

impl RadianceImage {
    pub fn new(image: Image, layout: Layout) -> Result<Self> {
        if image.channels != layout.channels() {
            return Err(Error::DimensionMismatch(format!(
                "{} layout needs {} channels, got {}",
                layout.name(),
                layout.channels(),
                image.channels
            )));
        }
        if let Some((index, &value)) = image
            .data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(invalid(format!(
                "radiance must be finite and non-negative, found {value} at {index}"
            )));
        }
        Ok(RadianceImage { image, layout })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn expect_layout(&self, layout: Layout) -> Result<()> {
        if self.layout == layout {
            Ok(())
        } else {
            Err(Error::WrongLayout {
                expected: layout.name(),
                found: self.layout.name(),
            })
        }
    }

    /// Multiply each channel by its own factor (e.g. white balance of a raw4
    /// radiance map). No clipping: radiance is unbounded.
    pub fn scale_channels(&self, factors: &[f32]) -> Result<RadianceImage> {
        if factors.len() != self.image.channels {
            return Err(Error::DimensionMismatch(format!(
                "{} factors for {} channels",
                factors.len(),
                self.image.channels
            )));
        }
        let mut out = self.image.clone();
        for (c, f) in factors.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v *= f);
        }
        Ok(RadianceImage {
            image: out,
            layout: self.layout,
        })
    }
}

/// Display-referred RGB image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SrgbImage {
    pub image: Image,
}

impl SrgbImage {
    pub fn new(image: Image) -> Result<Self> {
        if image.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "sRGB image needs 3 channels, got {}",
                image.channels
            )));
        }
        check_unit_range(&image.data)?;
        Ok(SrgbImage { image })
    }
}

fn check_exposure(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("exposure time must be positive, got {t}")))
    }
}

fn check_unit_range(data: &[f32]) -> Result<()> {
    match data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        Some((index, &value)) => Err(Error::ValueOutOfRange { index, value }),
        None => Ok(()),
    }
}

/// Split an RGGB mosaic into R, G1, G2, B planes with black level removed
/// and values normalized to [0, 1].
pub fn pack_bayer(frame: &BayerFrame) -> Result<PackedRaw> {
    if frame.pattern != BayerPattern::Rggb {
        return Err(Error::UnsupportedPattern(frame.pattern.name().into()));
    }
    frame.validate()?;
    let (w, h) = (frame.width / 2, frame.height / 2);
    let bl = f64::from(frame.black_level);
    let range = f64::from(frame.white_level) - bl;
    let mut image = Image::new(w, h, 4);
    for (p, &(dy, dx)) in PLANE_SITES.iter().enumerate() {
        let plane = image.channel_mut(p);
        for y in 0..h {
            let row = (2 * y + dy) * frame.width;
            for x in 0..w {
                let s = f64::from(frame.data[row + 2 * x + dx]);
                plane[y * w + x] = ((s - bl) / range).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(PackedRaw {
        image,
        exposure_time: frame.exposure_time,
        white_balanced: false,
    })
}

/// Re-mosaic a packed image, quantizing with round-half-up.
pub fn unpack_bayer(img: &PackedRaw, bit_depth: u32, black_level: u16, white_level: u16) -> Result<BayerFrame> {
    check_unit_range(&img.image.data)?;
    let (w, h) = (img.width(), img.height());
    let bl = f64::from(black_level);
    let range = f64::from(white_level) - bl;
    let mut data = vec![0u16; 4 * w * h];
    let full_w = 2 * w;
    for (p, &(dy, dx)) in PLANE_SITES.iter().enumerate() {
        let plane = img.image.channel(p);
        for y in 0..h {
            for x in 0..w {
                let v = f64::from(plane[y * w + x]);
                let code = (v * range + bl + 0.5).floor();
                data[(2 * y + dy) * full_w + 2 * x + dx] = code as u16;
            }
        }
    }
    let frame = BayerFrame {
        width: full_w,
        height: 2 * h,
        pattern: BayerPattern::Rggb,
        bit_depth,
        black_level,
        white_level,
        data,
        exposure_time: img.exposure_time,
        analog_gain: 1.0,
        wb_gains: WbGains::UNIT,
    };
    frame.validate()?;
    Ok(frame)
}

/// Apply per-channel gains, clipping at 1.0.
pub fn white_balance(img: &PackedRaw, gains: WbGains) -> Result<PackedRaw> {
    if img.white_balanced {
        return Err(Error::AlreadyWhiteBalanced);
    }
    gains.validate()?;
    let mut image = img.image.clone();
    for (p, g) in gains.per_plane().iter().enumerate() {
        image
            .channel_mut(p)
            .iter_mut()
            .for_each(|v| *v = (*v * g).clamp(0.0, 1.0));
    }
    Ok(PackedRaw {
        image,
        exposure_time: img.exposure_time,
        white_balanced: true,
    })
}

/// Divide by exposure time to move into the radiance domain.
pub fn to_radiance(img: &PackedRaw) -> Result<RadianceImage> {
    check_exposure(img.exposure_time)?;
    Ok(RadianceImage {
        image: ldr_to_radiance(&img.image, img.exposure_time),
        layout: Layout::Raw4,
    })
}

pub(crate) fn ldr_to_radiance(img: &Image, exposure_time: f64) -> Image {
    let inv = (1.0 / exposure_time) as f32;
    img.map(|v| v * inv)
}

/// Rescale a frame to a different exposure time, clipping at 1.0.
pub fn match_exposure(reference: &PackedRaw, t_target: f64) -> Result<PackedRaw> {
    check_exposure(reference.exposure_time)?;
    check_exposure(t_target)?;
    Ok(PackedRaw {
        image: scale_exposure(&reference.image, reference.exposure_time, t_target),
        exposure_time: t_target,
        white_balanced: reference.white_balanced,
    })
}

pub(crate) fn scale_exposure(img: &Image, t_from: f64, t_to: f64) -> Image {
    let k = t_to / t_from;
    img.map(|v| (f64::from(v) * k).clamp(0.0, 1.0) as f32)
}

/// Default gamma for the alignment pre-correction.
pub const DEFAULT_GAMMA: f32 = 2.2;

/// `v^(1/gamma)` on a [0, 1] packed image.
pub fn gamma_correct(img: &PackedRaw, gamma: f32) -> Result<PackedRaw> {
    check_gamma(gamma)?;
    check_non_negative(&img.image)?;
    Ok(PackedRaw {
        image: gamma_image(&img.image, gamma),
        exposure_time: img.exposure_time,
        white_balanced: img.white_balanced,
    })
}

/// Gamma-correct a radiance map after normalizing it by its maximum.
/// Returns the corrected image (values in [0, 1]) and the normalization
/// peak needed to invert the mapping.
pub fn gamma_correct_radiance(img: &RadianceImage, gamma: f32) -> Result<(RadianceImage, f32)> {
    check_gamma(gamma)?;
    check_non_negative(&img.image)?;
    let peak = img.image.data.iter().copied().fold(0.0f32, f32::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let normalized = img.image.map(|v| (v * scale).min(1.0));
    Ok((
        RadianceImage {
            image: gamma_image(&normalized, gamma),
            layout: img.layout,
        },
        if peak > 0.0 { peak } else { 1.0 },
    ))
}

pub(crate) fn gamma_image(img: &Image, gamma: f32) -> Image {
    let inv = 1.0 / gamma;
    img.map(|v| v.powf(inv))
}

fn check_gamma(gamma: f32) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("gamma must be positive, got {gamma}")))
    }
}

fn check_non_negative(img: &Image) -> Result<()> {
    match img.data.iter().position(|v| v.is_nan() || *v < 0.0) {
        Some(i) => Err(invalid(format!("negative or NaN value {} at {i}", img.data[i]))),
        None => Ok(()),
    }
}
