//! Flow estimation and flow-guided deformable alignment of neighboring
//! frames onto the reference.

mod deform;
mod flow;
mod pfd;
mod pyramid;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub use deform::{
    deformable_sample, flow_to_offsets, kernel_displacement, refine_offsets, refine_offsets_among, Guide, OffsetField,
    RefineConfig, TapWeights, CENTER_TAP, KERNEL_TAPS,
};
pub use flow::{
    estimate_flow, estimate_flow_masked, estimate_flow_triple, flow_guides, guide_plane, reference_validity,
    FlowConfig, FlowField, FlowPyramid,
};
pub use pfd::{align_pyramid, Aligned};
pub use pyramid::{build_pyramid, crop, downsample, mask_pyramid, reflect_pad, upsample};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct AlignConfig {
    pub flow: FlowConfig,
    pub refine: RefineConfig,
    /// Alignment scales; must not exceed the flow levels.
    pub levels: usize,
    /// Weight of the upsampled coarser result in the low-frequency band
    /// where the current scale matched poorly (scaled by one minus modulation).
    pub coarse_blend: f32,
    pub use_flow: bool,
    pub use_refinement: bool,
    /// Normalized LDR value at or above which a pixel counts as saturated.
    pub saturation_level: f32,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            flow: FlowConfig::default(),
            refine: RefineConfig::default(),
            levels: 4,
            coarse_blend: 1.0,
            use_flow: true,
            use_refinement: true,
            saturation_level: 0.97,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.refine.validate()?;
        if self.levels == 0 || self.levels > self.flow.levels {
            return Err(invalid(format!(
                "alignment levels must be in 1..={}, got {}",
                self.flow.levels, self.levels
            )));
        }
        if !(0.0..=1.0).contains(&self.coarse_blend) {
            return Err(invalid("coarse blend weight must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The no-alignment ablation: neighbors are used as captured.
    pub fn without_alignment(mut self) -> Self {
        self.use_flow = false;
        self.use_refinement = false;
        self
    }
}
