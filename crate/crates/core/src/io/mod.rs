//! File formats and sequence manifests.

mod manifest;
mod pfm;
mod pgm;
mod png;

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raw::{Layout, RadianceImage};

pub use manifest::{
    load_manifest, Calibration, FrameRecord, LoadOptions, Provenance, SequenceManifest, SCHEMA_VERSION,
};
pub use pfm::{decode_pfm, encode_pfm, read_flow, read_pfm, stack_planes, unstack_planes, write_flow, write_pfm};
pub use pgm::{decode_pgm16, encode_pgm16, read_raw_frame, write_raw_frame, RawSidecar};
pub use png::{read_png16, write_png16, write_png8};

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// `frame.pfm` → `frame.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Sidecar of an HDR PFM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HdrSidecar {
    pub layout: Layout,
    pub width: usize,
    pub height: usize,
    /// Plane names in file order, top to bottom for stacked layouts.
    pub planes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

fn plane_names(layout: Layout) -> Vec<String> {
    let names: &[&str] = match layout {
        Layout::Raw4 => &["R", "G1", "G2", "B"],
        Layout::Rgb3 => &["R", "G", "B"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

/// Write linear radiance: raw4 as a stacked single-channel PFM, RGB as a
/// three-channel PFM, each with a sidecar.
pub fn write_radiance(path: &Path, img: &RadianceImage, calibration: Option<&Calibration>) -> Result<()> {
    let body = match img.layout {
        Layout::Raw4 => stack_planes(&img.image),
        Layout::Rgb3 => img.image.clone(),
    };
    write_pfm(path, &body)?;
    let sidecar = HdrSidecar {
        layout: img.layout,
        width: img.width(),
        height: img.height(),
        planes: plane_names(img.layout),
        calibration: calibration.cloned(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

/// Read radiance written by [`write_radiance`]. Without a sidecar a
/// three-channel file is taken as RGB.
pub fn read_radiance(path: &Path) -> Result<RadianceImage> {
    let img = read_pfm(path)?;
    let side = sidecar_path(path);
    let layout = if side.exists() {
        let meta: HdrSidecar = read_json(&side)?;
        let expected_height = meta.height * meta.layout.channels();
        let ok = img.width == meta.width
            && match meta.layout {
                Layout::Raw4 => img.channels == 1 && img.height == expected_height,
                Layout::Rgb3 => img.channels == 3 && img.height == meta.height,
            };
        if !ok {
            return Err(Error::decode(
                "PFM",
                path,
                format!(
                    "{}x{}x{} payload does not match sidecar ({} {}x{})",
                    img.width,
                    img.height,
                    img.channels,
                    meta.layout.name(),
                    meta.width,
                    meta.height
                ),
            ));
        }
        meta.layout
    } else if img.channels == 3 {
        Layout::Rgb3
    } else {
        return Err(Error::decode(
            "PFM",
            path,
            format!("single-channel file needs a sidecar at {}", side.display()),
        ));
    };
    let image = match layout {
        Layout::Raw4 => unstack_planes(&img, 4)?,
        Layout::Rgb3 => img,
    };
    RadianceImage::new(image, layout)
}
