use timbre_core::latent::{BoxError, FrameRenderer};
use timbre_core::{AudioBuffer, TransformSpec};

use crate::config::RenderConfig;
use crate::dsp::{denormalize, griffin_lim, tile_frames, GriffinLimConfig};

/// Renders normalized model frames: de-normalize, hold each frame for one
/// segment, then recover phase with Griffin-Lim in the frames' own transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRenderer {
    pub spec: TransformSpec,
    pub norm_constant: f64,
    pub segment_ms: f64,
    pub griffin_lim: GriffinLimConfig,
}

impl SpectralRenderer {
    pub fn new(spec: TransformSpec, norm_constant: f64, config: &RenderConfig) -> Self {
        Self {
            spec,
            norm_constant,
            segment_ms: config.segment_ms,
            griffin_lim: config.griffin_lim,
        }
    }
}

impl FrameRenderer for SpectralRenderer {
    fn render(&self, frames: &[Vec<f64>]) -> Result<AudioBuffer, BoxError> {
        let raw: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| denormalize(f, self.norm_constant).into_iter().map(|m| m.max(0.0)).collect())
            .collect();
        let (plan, target) = tile_frames(&raw, &self.spec, self.segment_ms)?;
        let out = griffin_lim(&target, &plan, &self.griffin_lim)?;
        log::debug!("griffin-lim final spectral convergence {:?}", out.errors.last());
        Ok(AudioBuffer::new(out.samples, self.spec.sample_rate)?)
    }
}
