//! JSON schemas for every config read and every JSON document written.

use schemars::{schema_for, Schema};

use crate::io::{HdrSidecar, RawSidecar, SequenceManifest};
use crate::isp::IspConfig;
use crate::merge::ScreenConfig;
use crate::pipeline::{EvalReport, MergeGtReport, PreviewReport, ReconstructReport, SceneReport, ScreenSummary};
use crate::reconstruct::{FrameStats, ReconstructConfig};
use crate::synth::SynthConfig;

/// Bumped whenever any schema changes incompatibly.
pub const SCHEMA_SET_VERSION: u32 = 1;

/// `(name, schema)` for each document; files are `schemas/v{N}/{name}.schema.json`.
pub fn all() -> Vec<(&'static str, Schema)> {
    vec![
        ("manifest", schema_for!(SequenceManifest)),
        ("synth-config", schema_for!(SynthConfig)),
        ("reconstruct-config", schema_for!(ReconstructConfig)),
        ("screen-config", schema_for!(ScreenConfig)),
        ("isp-config", schema_for!(IspConfig)),
        ("merge-gt-report", schema_for!(MergeGtReport)),
        ("screen-report", schema_for!(ScreenSummary)),
        ("reconstruct-report", schema_for!(ReconstructReport)),
        ("frame-stats", schema_for!(FrameStats)),
        ("scene-report", schema_for!(SceneReport)),
        ("eval-report", schema_for!(EvalReport)),
        ("preview-report", schema_for!(PreviewReport)),
        ("hdr-sidecar", schema_for!(HdrSidecar)),
        ("raw-sidecar", schema_for!(RawSidecar)),
    ]
}

/// Pretty JSON text of a schema as shipped in the repository.
pub fn render(schema: &Schema) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schema serializes");
    s.push('\n');
    s
}
