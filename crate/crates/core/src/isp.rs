//! Minimal ISP without white balance: demosaic, color matrix, display encode.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::raw::{Layout, RadianceImage, SrgbImage, PLANE_SITES};

/// Transfer curve between linear light and encoded values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transfer {
    Srgb,
    Gamma { gamma: f32 },
    None,
}

impl Transfer {
    /// Linear → encoded. Input is expected in [0, 1].
    #[inline]
    pub fn encode(self, v: f32) -> f32 {
        match self {
            Transfer::Srgb => srgb_oetf(v),
            Transfer::Gamma { gamma } => v.max(0.0).powf(1.0 / gamma),
            Transfer::None => v,
        }
    }

    /// Encoded → linear.
    #[inline]
    pub fn decode(self, v: f32) -> f32 {
        match self {
            Transfer::Srgb => srgb_eotf(v),
            Transfer::Gamma { gamma } => v.max(0.0).powf(gamma),
            Transfer::None => v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transfer::Gamma { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(invalid(format!("gamma must be positive, got {gamma}")))
            }
            _ => Ok(()),
        }
    }
}

const SRGB_LINEAR_CUTOFF: f32 = 0.003_130_8;

#[inline]
pub fn srgb_oetf(v: f32) -> f32 {
    if v >= 1.0 {
        1.0
    } else if v <= SRGB_LINEAR_CUTOFF {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
pub fn srgb_eotf(v: f32) -> f32 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Demosaic {
    #[default]
    BilinearPack4,
}

pub type Ccm = [[f32; 3]; 3];

pub const IDENTITY_CCM: Ccm = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct IspConfig {
    pub ccm: Ccm,
    pub oetf: Transfer,
    pub demosaic: Demosaic,
}

impl Default for IspConfig {
    fn default() -> Self {
        IspConfig {
            ccm: IDENTITY_CCM,
            oetf: Transfer::Srgb,
            demosaic: Demosaic::BilinearPack4,
        }
    }
}

impl IspConfig {
    pub fn validate(&self) -> Result<()> {
        check_ccm(&self.ccm)?;
        for (i, row) in self.ccm.iter().enumerate() {
            let sum: f32 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(invalid(format!("CCM row {i} sums to {sum}, expected 1")));
            }
        }
        self.oetf.validate()
    }

    /// Raw4 radiance → linear RGB radiance at full mosaic resolution.
    pub fn process(&self, img: &RadianceImage) -> Result<RadianceImage> {
        self.validate()?;
        let rgb = demosaic_pack4(img)?;
        apply_ccm(&rgb, &self.ccm)
    }

    /// Raw4 radiance → display image.
    pub fn render(&self, img: &RadianceImage, exposure_scale: f32) -> Result<SrgbImage> {
        encode_display(&self.process(img)?, self.oetf, exposure_scale)
    }
}

fn check_ccm(ccm: &Ccm) -> Result<()> {
    if ccm.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("CCM contains non-finite entries"))
    }
}

/// Bilinear 2× upsampling of the packed planes, honoring each plane's
/// photosite phase. Green is the mean of the upsampled G1 and G2 planes.
pub fn demosaic_pack4(img: &RadianceImage) -> Result<RadianceImage> {
    img.expect_layout(Layout::Raw4)?;
    let (w, h) = (img.width(), img.height());
    let (fw, fh) = (2 * w, 2 * h);
    let planes = img.image.planes();
    let up = |p: usize, out: &mut [f32]| {
        let (dy, dx) = PLANE_SITES[p];
        for y in 0..fh {
            let v = ((y as f32 - dy as f32) * 0.5).clamp(0.0, (h - 1) as f32);
            for x in 0..fw {
                let u = ((x as f32 - dx as f32) * 0.5).clamp(0.0, (w - 1) as f32);
                out[y * fw + x] = planes[p].bilinear(u, v);
            }
        }
    };
    let n = fw * fh;
    let mut out = Image::new(fw, fh, 3);
    up(0, out.channel_mut(0));
    let mut g1 = vec![0.0f32; n];
    let mut g2 = vec![0.0f32; n];
    up(1, &mut g1);
    up(2, &mut g2);
    for (o, (a, b)) in out.channel_mut(1).iter_mut().zip(g1.iter().zip(&g2)) {
        *o = 0.5 * (a + b);
    }
    up(3, out.channel_mut(2));
    Ok(RadianceImage {
        image: out,
        layout: Layout::Rgb3,
    })
}

/// Per-pixel 3×3 matrix multiply; negative results clip to 0.
pub fn apply_ccm(img: &RadianceImage, ccm: &Ccm) -> Result<RadianceImage> {
    img.expect_layout(Layout::Rgb3)?;
    check_ccm(ccm)?;
    let n = img.image.pixels();
    let src = &img.image;
    let mut out = Image::new(src.width, src.height, 3);
    for i in 0..n {
        let px = [src.data[i], src.data[n + i], src.data[2 * n + i]];
        for (r, row) in ccm.iter().enumerate() {
            let v = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            out.data[r * n + i] = v.max(0.0);
        }
    }
    Ok(RadianceImage {
        image: out,
        layout: Layout::Rgb3,
    })
}

/// Scale, clip to [0, 1] and apply the output transfer curve.
pub fn encode_display(img: &RadianceImage, oetf: Transfer, exposure_scale: f32) -> Result<SrgbImage> {
    img.expect_layout(Layout::Rgb3)?;
    oetf.validate()?;
    if !(exposure_scale.is_finite() && exposure_scale > 0.0) {
        return Err(invalid(format!(
            "exposure scale must be positive, got {exposure_scale}"
        )));
    }
    Ok(SrgbImage {
        image: img
            .image
            .map(|v| oetf.encode((v * exposure_scale).clamp(0.0, 1.0)).clamp(0.0, 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw4(w: usize, h: usize, planes: [f32; 4]) -> RadianceImage {
        let mut img = Image::new(w, h, 4);
        for (c, v) in planes.iter().enumerate() {
            img.channel_mut(c).fill(*v);
        }
        RadianceImage::new(img, Layout::Raw4).unwrap()
    }

    fn rgb(values: Vec<f32>) -> RadianceImage {
        let n = values.len() / 3;
        RadianceImage::new(Image::from_vec(n, 1, 3, values).unwrap(), Layout::Rgb3).unwrap()
    }

    #[test]
    fn demosaic_constant_is_constant() {
        let out = demosaic_pack4(&raw4(5, 3, [0.37; 4])).unwrap();
        assert_eq!((out.width(), out.height()), (10, 6));
        assert!(out.image.data.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn demosaic_red_only() {
        let out = demosaic_pack4(&raw4(4, 4, [1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(out.image.channel(0).iter().all(|&v| v == 1.0));
        assert!(out.image.channel(1).iter().all(|&v| v == 0.0));
        assert!(out.image.channel(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn demosaic_ramp_matches_closed_form() {
        let (w, h) = (8, 4);
        let mut img = Image::new(w, h, 4);
        for c in 0..4 {
            for y in 0..h {
                for x in 0..w {
                    img.set(c, x, y, 0.1 * x as f32 + 0.02 * c as f32);
                }
            }
        }
        let out = demosaic_pack4(&RadianceImage::new(img, Layout::Raw4).unwrap()).unwrap();
        for y in 0..2 * h {
            for x in 0..2 * w {
                // Plane-coordinate of output column x for a plane with column phase dx.
                let at = |dx: f32| ((x as f32 - dx) / 2.0).clamp(0.0, (w - 1) as f32);
                let r = 0.1 * at(0.0);
                let g = 0.5 * ((0.1 * at(1.0) + 0.02) + (0.1 * at(0.0) + 0.04));
                let b = 0.1 * at(1.0) + 0.06;
                assert_abs_diff_eq!(out.image.get(0, x, y), r, epsilon = 1e-6);
                assert_abs_diff_eq!(out.image.get(1, x, y), g, epsilon = 1e-6);
                assert_abs_diff_eq!(out.image.get(2, x, y), b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn demosaic_rejects_rgb() {
        assert!(demosaic_pack4(&rgb(vec![0.0; 3])).is_err());
    }

    #[test]
    fn ccm_examples() {
        let img = rgb(vec![0.1, 0.2, 0.3]);
        assert_eq!(apply_ccm(&img, &IDENTITY_CCM).unwrap(), img);
        let m = [[1.6, -0.4, -0.2], [-0.3, 1.5, -0.2], [0.1, -0.5, 1.4]];
        let gray = apply_ccm(&rgb(vec![0.4; 3]), &m).unwrap();
        for v in &gray.image.data {
            assert_abs_diff_eq!(*v, 0.4, epsilon = 1e-6);
        }
        assert!(apply_ccm(&img, &[[f32::NAN; 3]; 3]).is_err());
    }

    #[test]
    fn ccm_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m: Ccm = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0f32..2.0)));
            let p: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0f32..4.0));
            let out = apply_ccm(&rgb(p.to_vec()), &m).unwrap();
            for (r, row) in m.iter().enumerate() {
                let acc: f64 = row.iter().zip(&p).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                assert_abs_diff_eq!(out.image.data[r], acc.max(0.0) as f32, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn encode_examples() {
        let img = rgb(vec![0.0, 0.25, 10.0]);
        let out = encode_display(&img, Transfer::Srgb, 4.0).unwrap();
        assert_eq!(out.image.data[0], 0.0);
        assert_eq!(out.image.data[1], 1.0);
        assert_eq!(out.image.data[2], 1.0);
        let g = encode_display(&rgb(vec![0.25; 3]), Transfer::Gamma { gamma: 2.2 }, 2.0).unwrap();
        assert_abs_diff_eq!(g.image.data[0], 0.5f32.powf(1.0 / 2.2), epsilon = 1e-7);
        assert!(encode_display(&img, Transfer::Srgb, 0.0).is_err());
    }

    #[test]
    fn srgb_branches_meet_at_cutoff() {
        let x = f64::from(SRGB_LINEAR_CUTOFF);
        let linear = 12.92 * x;
        let power = 1.055 * x.powf(1.0 / 2.4) - 0.055;
        assert!((linear - power).abs() < 1e-6);
        assert!((srgb_eotf(srgb_oetf(0.5)) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(IspConfig::default().validate().is_ok());
        let bad = IspConfig {
            ccm: [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            ..IspConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"ccm":[[1,0,0],[0,1,0],[0,0,1]],"oetf":{"kind":"gamma","gamma":2.2}}"#;
        let cfg: IspConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.oetf, Transfer::Gamma { gamma: 2.2 });
    }

    #[test]
    fn gray_stays_achromatic_through_isp() {
        let out = IspConfig::default().process(&raw4(4, 4, [0.3; 4])).unwrap();
        let n = out.image.pixels();
        for i in 0..n {
            assert_eq!(out.image.data[i], out.image.data[n + i]);
            assert_eq!(out.image.data[i], out.image.data[2 * n + i]);
        }
    }
}
