//! Single-frame spectral descriptors in linear Hz.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::spectral::{bin_frequencies, SpectralFrame};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DescriptorError {
    #[error("descriptor undefined on a frame with no energy")]
    UndefinedDescriptor,
    #[error("{magnitudes} magnitudes but {frequencies} bin frequencies")]
    LengthMismatch { magnitudes: usize, frequencies: usize },
    #[error("negative or non-finite magnitude at bin {0}")]
    BadMagnitude(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Centroid,
    Bandwidth,
}

impl DescriptorKind {
    pub const ALL: [DescriptorKind; 2] = [DescriptorKind::Centroid, DescriptorKind::Bandwidth];

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "centroid" => Some(Self::Centroid),
            "bandwidth" => Some(Self::Bandwidth),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Centroid => "centroid",
            Self::Bandwidth => "bandwidth",
        }
    }

    /// Evaluate on raw magnitudes against precomputed bin frequencies.
    pub fn eval(self, magnitudes: &[f64], freqs: &[f64]) -> Result<f64, DescriptorError> {
        match self {
            Self::Centroid => spectral_centroid(magnitudes, freqs),
            Self::Bandwidth => spectral_bandwidth(magnitudes, freqs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorValue {
    pub kind: DescriptorKind,
    pub value: f64,
    /// False for transforms whose bins are not physical frequencies (DCT).
    pub physical: bool,
}

fn moments(magnitudes: &[f64], freqs: &[f64]) -> Result<(f64, f64), DescriptorError> {
    if magnitudes.len() != freqs.len() {
        return Err(DescriptorError::LengthMismatch {
            magnitudes: magnitudes.len(),
            frequencies: freqs.len(),
        });
    }
    if let Some(i) = magnitudes.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(DescriptorError::BadMagnitude(i));
    }
    let total: f64 = magnitudes.iter().sum();
    if total <= 0.0 {
        return Err(DescriptorError::UndefinedDescriptor);
    }
    let centroid = magnitudes.iter().zip(freqs).map(|(m, f)| m * f).sum::<f64>() / total;
    Ok((total, centroid))
}

/// `Σ f_k m_k / Σ m_k`.
pub fn spectral_centroid(magnitudes: &[f64], freqs: &[f64]) -> Result<f64, DescriptorError> {
    moments(magnitudes, freqs).map(|(_, c)| c)
}

/// `sqrt(Σ m_k (f_k − centroid)² / Σ m_k)`.
pub fn spectral_bandwidth(magnitudes: &[f64], freqs: &[f64]) -> Result<f64, DescriptorError> {
    let (total, c) = moments(magnitudes, freqs)?;
    let var = magnitudes
        .iter()
        .zip(freqs)
        .map(|(m, f)| m * (f - c) * (f - c))
        .sum::<f64>()
        / total;
    Ok(Float::sqrt(var.max(0.0)))
}

pub fn describe(frame: &SpectralFrame, kind: DescriptorKind) -> Result<DescriptorValue, DescriptorError> {
    let freqs = bin_frequencies(&frame.spec);
    Ok(DescriptorValue {
        kind,
        value: kind.eval(&frame.magnitudes, &freqs)?,
        physical: frame.spec.has_physical_bins(),
    })
}

/// Both descriptors for each frame, in `DescriptorKind::ALL` order.
pub fn describe_all(frames: &[SpectralFrame]) -> Vec<Result<[f64; 2], DescriptorError>> {
    frames
        .iter()
        .map(|f| {
            let freqs = bin_frequencies(&f.spec);
            Ok([
                spectral_centroid(&f.magnitudes, &freqs)?,
                spectral_bandwidth(&f.magnitudes, &freqs)?,
            ])
        })
        .collect()
}
