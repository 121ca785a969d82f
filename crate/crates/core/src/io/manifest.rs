//! Sequence manifests: the ordered frame list of one scene plus calibration.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::pgm::{read_raw_with, RawSidecar};
use super::{read_png16, write_json};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::isp::{Ccm, IDENTITY_CCM};
use crate::raw::{BayerFrame, BayerPattern, WbGains};
use crate::synth::{Domain, ExposureRole, SynthConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    #[serde(alias = "t")]
    pub exposure_time: f64,
    #[serde(default = "unit_gain")]
    pub analog_gain: f64,
    pub role: ExposureRole,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
}

fn unit_gain() -> f64 {
    1.0
}

impl FrameRecord {
    /// Exposure time with analog gain folded in.
    pub fn effective_exposure(&self) -> f64 {
        self.exposure_time * self.analog_gain
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub bit_depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub black_level: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub white_level: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wb_gains: Option<WbGains>,
    #[serde(default = "identity_ccm")]
    pub ccm: Ccm,
    #[serde(default = "rggb")]
    pub pattern: BayerPattern,
}

fn identity_ccm() -> Ccm {
    IDENTITY_CCM
}

fn rggb() -> BayerPattern {
    BayerPattern::Rggb
}

impl Calibration {
    /// Calibration for display-referred frames.
    pub fn srgb(bit_depth: u32) -> Self {
        Calibration {
            bit_depth,
            black_level: None,
            white_level: None,
            wb_gains: None,
            ccm: IDENTITY_CCM,
            pattern: BayerPattern::Rggb,
        }
    }

    pub fn raw(bit_depth: u32, black_level: u16, white_level: u16, wb_gains: WbGains) -> Self {
        Calibration {
            black_level: Some(black_level),
            white_level: Some(white_level),
            wb_gains: Some(wb_gains),
            ..Calibration::srgb(bit_depth)
        }
    }

    fn raw_levels(&self) -> Option<(u16, u16, WbGains)> {
        Some((self.black_level?, self.white_level?, self.wb_gains?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub noise_var: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub schema_version: u32,
    pub scene: String,
    pub frames: Vec<FrameRecord>,
    pub calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Accept exposure patterns that do not strictly alternate.
    pub allow_irregular: bool,
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

/// Parse and validate a manifest; every invariant is checked eagerly.
pub fn load_manifest(path: &Path, opts: LoadOptions) -> Result<SequenceManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = SequenceManifest::parse(&text, base_dir)?;
    m.validate(opts)?;
    Ok(m)
}

impl SequenceManifest {
    /// Parse without touching the filesystem. Errors name the offending
    /// field, and the frame index for per-frame fields.
    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut root: Value = serde_json::from_str(text).map_err(|e| manifest_err(format!("invalid JSON: {e}")))?;
        let obj = root
            .as_object_mut()
            .ok_or_else(|| manifest_err("top level must be an object"))?;
        let frames = match obj.remove("frames") {
            Some(Value::Array(a)) => a,
            Some(_) => return Err(manifest_err("frames: expected an array")),
            None => return Err(manifest_err("missing field `frames`")),
        };
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value::<FrameRecord>(v).map_err(|e| manifest_err(format!("frames[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        obj.insert("frames".into(), Value::Array(Vec::new()));
        let mut m: SequenceManifest = serde_json::from_value(root).map_err(|e| manifest_err(e.to_string()))?;
        m.frames = frames;
        m.base_dir = base_dir;
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn domain(&self) -> Domain {
        self.frames.first().map_or(Domain::Raw, |f| f.domain)
    }

    /// Per-frame `t` used for radiance normalization.
    pub fn effective_times(&self) -> Vec<f64> {
        self.frames.iter().map(FrameRecord::effective_exposure).collect()
    }

    pub fn validate(&self, opts: LoadOptions) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(manifest_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.frames.is_empty() {
            return Err(manifest_err("frames: at least one frame is required"));
        }
        let domain = self.domain();
        for (i, f) in self.frames.iter().enumerate() {
            if !(f.exposure_time.is_finite() && f.exposure_time > 0.0) {
                return Err(manifest_err(format!(
                    "frames[{i}].exposure_time: must be positive, got {}",
                    f.exposure_time
                )));
            }
            if !(f.analog_gain.is_finite() && f.analog_gain > 0.0) {
                return Err(manifest_err(format!(
                    "frames[{i}].analog_gain: must be positive, got {}",
                    f.analog_gain
                )));
            }
            if f.domain != domain {
                return Err(manifest_err(format!(
                    "frames[{i}].domain: all frames must share one domain"
                )));
            }
            for p in std::iter::once(&f.path).chain(f.gt_path.as_ref()) {
                let full = self.resolve(p);
                if !full.is_file() {
                    let e = std::io::Error::new(std::io::ErrorKind::NotFound, format!("frames[{i}]: file not found"));
                    return Err(Error::io(full, e));
                }
            }
        }
        self.check_roles(opts)?;
        let cal = &self.calibration;
        if !(1..=16).contains(&cal.bit_depth) {
            return Err(manifest_err(format!(
                "calibration.bit_depth: must be in 1..=16, got {}",
                cal.bit_depth
            )));
        }
        if domain == Domain::Raw {
            let (black, white, gains) = cal
                .raw_levels()
                .ok_or_else(|| manifest_err("calibration: raw sequences need black_level, white_level and wb_gains"))?;
            if black >= white || u32::from(white) >= 1u32 << cal.bit_depth {
                return Err(manifest_err(format!(
                    "calibration: levels {black}..{white} invalid for {} bits",
                    cal.bit_depth
                )));
            }
            gains
                .validate()
                .map_err(|e| manifest_err(format!("calibration.wb_gains: {e}")))?;
        }
        Ok(())
    }

    fn check_roles(&self, opts: LoadOptions) -> Result<()> {
        let t = self.effective_times();
        let of_role = |r: ExposureRole| {
            self.frames
                .iter()
                .zip(&t)
                .filter(move |(f, _)| f.role == r)
                .map(|(_, &t)| t)
        };
        let min_long = of_role(ExposureRole::Long).fold(f64::INFINITY, f64::min);
        let max_short = of_role(ExposureRole::Short).fold(0.0, f64::max);
        if min_long <= max_short {
            return Err(manifest_err(format!(
                "roles: every long exposure must exceed every short one (long {min_long}, short {max_short})"
            )));
        }
        if opts.allow_irregular {
            return Ok(());
        }
        for i in 1..self.frames.len() {
            if self.frames[i].role == self.frames[i - 1].role {
                return Err(manifest_err(format!(
                    "frames[{i}]: exposure pattern does not alternate (use --allow-irregular to accept)"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Load raw frame `i` with the manifest's calibration and exposure.
    pub fn raw_frame(&self, i: usize) -> Result<BayerFrame> {
        let f = &self.frames[i];
        let cal = &self.calibration;
        let (black_level, white_level, wb_gains) = cal
            .raw_levels()
            .ok_or_else(|| manifest_err("calibration: raw sequences need black_level, white_level and wb_gains"))?;
        let side = RawSidecar {
            exposure_time: f.exposure_time,
            analog_gain: f.analog_gain,
            wb_gains,
            black_level,
            white_level,
            bit_depth: cal.bit_depth,
            pattern: cal.pattern,
        };
        read_raw_with(&self.resolve(&f.path), &side)
    }

    /// Load display-referred frame `i` as normalized encoded values.
    pub fn srgb_frame(&self, i: usize) -> Result<Image> {
        read_png16(&self.resolve(&self.frames[i].path), self.calibration.bit_depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_json(i: usize, t: f64) -> String {
        let role = if t > 1.0 { "long" } else { "short" };
        format!(r#"{{"path": "f{i}.pgm", "exposure_time": {t}, "role": "{role}", "domain": "raw"}}"#)
    }

    fn manifest_json(frames: &[String]) -> String {
        format!(
            r#"{{"schema_version": 1, "scene": "s", "frames": [{}],
               "calibration": {{"bit_depth": 10, "black_level": 64, "white_level": 1023, "wb_gains": [2.0, 1.0, 1.5]}}}}"#,
            frames.join(",")
        )
    }

    fn touch_all(dir: &Path, n: usize) {
        for i in 0..n {
            std::fs::write(dir.join(format!("f{i}.pgm")), b"").unwrap();
        }
    }

    fn load_str(dir: &Path, text: &str, opts: LoadOptions) -> Result<SequenceManifest> {
        let p = dir.join("m.json");
        std::fs::write(&p, text).unwrap();
        load_manifest(&p, opts)
    }

    #[test]
    fn minimal_three_frames_load() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 3);
        let frames: Vec<_> = (0..3).map(|i| frame_json(i, [8.0, 1.0][i % 2])).collect();
        let m = load_str(dir.path(), &manifest_json(&frames), LoadOptions::default()).unwrap();
        assert_eq!(m.frames.len(), 3);
        assert_eq!(m.calibration.ccm, IDENTITY_CCM);
    }

    #[test]
    fn missing_exposure_names_frame() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 3);
        let mut frames: Vec<_> = (0..3).map(|i| frame_json(i, [8.0, 1.0][i % 2])).collect();
        frames[2] = r#"{"path": "f2.pgm", "role": "long", "domain": "raw"}"#.into();
        let e = load_str(dir.path(), &manifest_json(&frames), LoadOptions::default()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("frames[2]") && msg.contains("exposure_time"), "{msg}");
    }

    #[test]
    fn sixty_alternating_frames_load() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 60);
        let frames: Vec<_> = (0..60).map(|i| frame_json(i, [1.0, 8.0][i % 2])).collect();
        let m = load_str(dir.path(), &manifest_json(&frames), LoadOptions::default()).unwrap();
        assert_eq!(m.frames.len(), 60);
    }

    #[test]
    fn short_alias_for_exposure() {
        let text =
            manifest_json(&[r#"{"path": "a", "t": 2.0, "analog_gain": 4.0, "role": "long", "domain": "raw"}"#.into()]);
        let m = SequenceManifest::parse(&text, PathBuf::new()).unwrap();
        assert_eq!(m.frames[0].exposure_time, 2.0);
        assert_eq!(m.effective_times(), vec![8.0]);
    }

    #[test]
    fn irregular_pattern_is_opt_in() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 3);
        let frames: Vec<_> = [8.0, 8.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &t)| frame_json(i, t))
            .collect();
        let text = manifest_json(&frames);
        let e = load_str(dir.path(), &text, LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("frames[1]"), "{e}");
        let opts = LoadOptions { allow_irregular: true };
        assert!(load_str(dir.path(), &text, opts).is_ok());
    }

    #[test]
    fn missing_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 2);
        let frames: Vec<_> = (0..3).map(|i| frame_json(i, [8.0, 1.0][i % 2])).collect();
        let e = load_str(dir.path(), &manifest_json(&frames), LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("f2.pgm"), "{e}");
    }

    #[test]
    fn raw_needs_complete_calibration() {
        let dir = tempfile::tempdir().unwrap();
        touch_all(dir.path(), 1);
        let text = manifest_json(&[frame_json(0, 8.0)]).replace(r#", "wb_gains": [2.0, 1.0, 1.5]"#, "");
        let e = load_str(dir.path(), &text, LoadOptions::default()).unwrap_err();
        assert!(e.to_string().contains("wb_gains"), "{e}");
    }

    #[test]
    fn roles_must_match_times() {
        let text = manifest_json(&[
            r#"{"path": "a", "t": 1.0, "role": "long", "domain": "raw"}"#.into(),
            r#"{"path": "a", "t": 8.0, "role": "short", "domain": "raw"}"#.into(),
        ]);
        let m = SequenceManifest::parse(&text, PathBuf::new()).unwrap();
        assert!(m.check_roles(LoadOptions::default()).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = manifest_json(&[r#"{"path": "a", "t": 1.0, "role": "long", "domain": "raw", "iso": 100}"#.into()]);
        let e = SequenceManifest::parse(&text, PathBuf::new()).unwrap_err();
        assert!(e.to_string().contains("frames[0]"), "{e}");
    }
}
