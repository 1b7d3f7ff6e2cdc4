//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use timbre_core::ratings::MissingPairPolicy;
use timbre_core::latent::PCA_DIMS;
use timbre_core::{TrainConfig, TransformSpec, VaeArchitecture};

use crate::dsp::GriffinLimConfig;
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "TIMBRE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareConfig {
    /// `stft`, `dct`, `nsgt-cq`, `nsgt-mel` or `nsgt-erb`.
    pub transform: String,
    pub frame_ms: f64,
    pub test_ratio: f64,
    /// Abort when more than this share of corpus files cannot be read.
    pub max_failure_ratio: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            transform: "nsgt-erb".into(),
            frame_ms: 200.0,
            test_ratio: 0.1,
            max_failure_ratio: 0.1,
        }
    }
}

impl PrepareConfig {
    pub fn spec(&self) -> Result<TransformSpec> {
        TransformSpec::from_name(&self.transform).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Start the decoder at the training-set mean frame instead of
    /// softplus(0) in every bin.
    pub mean_output_init: bool,
    /// Multiplier on the initial decoder output weights.
    pub output_weight_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![2000; 3],
            latent_dim: 64,
            mean_output_init: true,
            output_weight_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// The reports and path tools view the latent space through three
    /// principal axes, so smaller latents are rejected here.
    pub fn arch(&self, input_dim: usize) -> Result<VaeArchitecture> {
        if self.latent_dim < PCA_DIMS {
            return Err(Error::Config(format!(
                "model.latent_dim must be at least {PCA_DIMS}, got {}",
                self.latent_dim
            )));
        }
        VaeArchitecture::new(input_dim, self.hidden.clone(), self.latent_dim).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub dims: usize,
    pub missing_pairs: MissingPairPolicy,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            dims: 3,
            missing_pairs: MissingPairPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Duration of one path point in the rendered audio.
    pub segment_ms: f64,
    pub griffin_lim: GriffinLimConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            segment_ms: 25.0,
            griffin_lim: GriffinLimConfig::default(),
        }
    }
}

/// Everything a pipeline run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; overrides `train.seed`.
    pub seed: u64,
    pub prepare: PrepareConfig,
    pub target: TargetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub render: RenderConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`, then the seed environment override.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[train]\nstage1_epochs = 3\n[model]\nhidden = [16]\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.stage1_epochs, 3);
        assert_eq!(cfg.train.stage2_epochs, 100);
        assert_eq!(cfg.model.hidden, vec![16]);
        assert_eq!(cfg.model.latent_dim, 64);
        assert_eq!(cfg.prepare.frame_ms, 200.0);
        let echo = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(echo, cfg);
    }

    #[test]
    fn bad_toml_is_a_config_error() {
        let err = RunConfig::from_toml("seed = \"x\"").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig { prepare: PrepareConfig { transform: "fft".into(), ..Default::default() }, ..Default::default() }
            .prepare
            .spec()
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
