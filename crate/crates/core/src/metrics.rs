//! μ-law tonemapping and the losses and scores computed in that domain.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{pairwise_mean, Image};

pub const DEFAULT_MU: f64 = 5000.0;
pub const PSNR_CAP: f64 = 99.0;
/// Percentile of the ground truth used as the shared normalization peak.
pub const PEAK_PERCENTILE: f64 = 99.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TonemapParams {
    pub mu: f64,
    pub normalization: f64,
}

impl TonemapParams {
    pub fn new(mu: f64, normalization: f64) -> Result<Self> {
        let p = TonemapParams { mu, normalization };
        p.validate()?;
        Ok(p)
    }

    /// Default μ with the peak taken from `gt`.
    pub fn for_ground_truth(gt: &Image) -> Result<Self> {
        Self::new(DEFAULT_MU, ground_truth_peak(gt)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.normalization.is_finite() && self.normalization > 0.0) {
            return Err(invalid(format!(
                "normalization must be positive, got {}",
                self.normalization
            )));
        }
        Ok(())
    }

    /// `log(1 + μ·h̄) / log(1 + μ)` for an already normalized, clipped value.
    #[inline]
    pub fn curve(&self, normalized: f64) -> f64 {
        (self.mu * normalized).ln_1p() / self.mu.ln_1p()
    }
}

/// The `p`-th percentile (0..=100) of all samples, linearly interpolated
/// between closest ranks.
pub fn percentile(values: &[f32], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("percentile of an empty image"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(invalid(format!("percentile must be in [0, 100], got {p}")));
    }
    let mut v: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Robust ground-truth peak; falls back to the maximum when the percentile
/// is zero, and errors on an all-zero image.
pub fn ground_truth_peak(gt: &Image) -> Result<f64> {
    let p = percentile(&gt.data, PEAK_PERCENTILE)?;
    if p > 0.0 {
        return Ok(p);
    }
    let max = gt.data.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        Ok(f64::from(max))
    } else {
        Err(invalid("ground truth is all zero; no normalization peak"))
    }
}

#[derive(Clone, Debug)]
pub struct Tonemapped {
    pub values: Vec<f64>,
    /// Samples whose normalized value exceeded 1 and were clipped.
    pub clipped: usize,
}

impl Tonemapped {
    pub fn clip_fraction(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.clipped as f64 / self.values.len() as f64
        }
    }
}

pub fn mu_tonemap(h: &Image, params: &TonemapParams) -> Result<Tonemapped> {
    params.validate()?;
    let mut clipped = 0;
    let mut values = Vec::with_capacity(h.data.len());
    for (i, &v) in h.data.iter().enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::ValueOutOfRange { index: i, value: v });
        }
        let mut n = f64::from(v) / params.normalization;
        if n > 1.0 {
            clipped += 1;
            n = 1.0;
        }
        values.push(params.curve(n));
    }
    Ok(Tonemapped { values, clipped })
}

fn tonemap_pair(pred: &Image, gt: &Image, params: &TonemapParams) -> Result<(Tonemapped, Tonemapped)> {
    pred.ensure_same_shape(gt, "prediction vs ground truth")?;
    Ok((mu_tonemap(pred, params)?, mu_tonemap(gt, params)?))
}

pub fn l1_tonemapped(pred: &Image, gt: &Image, params: &TonemapParams) -> Result<f64> {
    let (a, b) = tonemap_pair(pred, gt, params)?;
    let diffs: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
    Ok(pairwise_mean(&diffs))
}

fn psnr_from(a: &Tonemapped, b: &Tonemapped) -> f64 {
    let sq: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).collect();
    let mse = pairwise_mean(&sq);
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr_mu(pred: &Image, gt: &Image, params: &TonemapParams) -> Result<f64> {
    let (a, b) = tonemap_pair(pred, gt, params)?;
    Ok(psnr_from(&a, &b))
}

/// Dynamic range added by an exposure ratio, in dB.
pub fn dynamic_range_gain(ratio: f64) -> Result<f64> {
    if !(ratio.is_finite() && ratio > 1.0) {
        return Err(invalid(format!("exposure ratio must exceed 1, got {ratio}")));
    }
    Ok(20.0 * ratio.log10())
}

/// All metrics for one prediction, in the shape written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1_mu: Option<f64>,
    pub clip_fraction: f64,
    pub params: TonemapParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    PsnrMu,
    L1Mu,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "psnr_mu" => Ok(Metric::PsnrMu),
            "l1_mu" => Ok(Metric::L1Mu),
            other => Err(invalid(format!("unknown metric {other:?}; expected psnr_mu or l1_mu"))),
        }
    }
}

/// Evaluate `pred` against `gt` with the shared ground-truth peak.
pub fn evaluate(pred: &Image, gt: &Image, mu: f64, metrics: &[Metric]) -> Result<MetricReport> {
    let params = TonemapParams::new(mu, ground_truth_peak(gt)?)?;
    let (a, b) = tonemap_pair(pred, gt, &params)?;
    let l1 = || {
        let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect();
        pairwise_mean(&d)
    };
    Ok(MetricReport {
        psnr_mu: metrics.contains(&Metric::PsnrMu).then(|| psnr_from(&a, &b)),
        l1_mu: metrics.contains(&Metric::L1Mu).then(l1),
        clip_fraction: a.clip_fraction(),
        params,
    })
}
