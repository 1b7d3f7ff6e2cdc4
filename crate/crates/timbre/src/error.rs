use std::path::{Path, PathBuf};

use timbre_core::descriptors::DescriptorError;
use timbre_core::latent::LatentError;
use timbre_core::ratings::RatingsError;
use timbre_core::regularizer::RegError;
use timbre_core::spectral::SpectralError;
use timbre_core::synthpath::SynthError;
use timbre_core::vae::VaeError;

use crate::dsp::DspError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Wav { path: PathBuf, source: hound::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    /// Bad command-line arguments, configuration or missing inputs.
    #[error("{0}")]
    Config(String),
    #[error("{failed} of {total} corpus files could not be read")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Ratings(#[from] RatingsError),
    #[error(transparent)]
    Reg(#[from] RegError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

impl Error {
    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
