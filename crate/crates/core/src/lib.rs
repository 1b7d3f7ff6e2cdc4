//! Perceptually regularized variational latent spaces for instrument spectra.
//!
//! This crate is the allocation-only algorithmic core: a small reverse-mode
//! autodiff engine, the VAE and its two-stage trainer, the distance-KL
//! regularizer, timbre-space construction from dissimilarity ratings, latent
//! analytics, spectral descriptors and descriptor-driven path synthesis.
//! Signal processing and file formats live in the `timbre` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod descriptors;
pub mod diff;
pub mod latent;
pub mod linalg;
pub mod ratings;
pub mod regularizer;
pub mod rng;
pub mod spectral;
pub mod synthpath;
pub mod vae;

pub use diff::{AdamConfig, AdamState, DiffError, Gradients, Scalar, Tape, Tensor, Var};
pub use rng::Rng;
pub use spectral::{AudioBuffer, NsgtScale, SpectralFrame, TransformKind, TransformSpec};
pub use vae::{TrainConfig, VaeArchitecture, VaeModel};
