//! Spectral data types shared by analysis, training and synthesis, plus the
//! frequency scales that place transform bins in Hz.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub const TARGET_SAMPLE_RATE: f64 = 22050.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("invalid transform spec: {0}")]
    InvalidSpec(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("frame has {got} bins, transform expects {expected}")]
    FrameLength { expected: usize, got: usize },
    #[error("negative or non-finite magnitude at bin {0}")]
    BadMagnitude(usize),
}

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, SpectralError> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(SpectralError::InvalidAudio(format!("sample rate {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SpectralError::InvalidAudio(format!("non-finite sample at {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Stft,
    Dct,
    Nsgt,
}

/// Frequency scale of an NSGT filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scale", rename_all = "lowercase")]
pub enum NsgtScale {
    /// Geometric spacing, `bins_per_octave` bins per doubling.
    Cq { bins_per_octave: u32 },
    /// Equal spacing on the `2595·log10(1 + f/700)` mel axis.
    Mel { bins: u32 },
    /// Equal spacing on the Glasberg–Moore ERB-rate axis.
    Erb { bins: u32 },
}

impl Default for NsgtScale {
    fn default() -> Self {
        NsgtScale::Erb { bins: 400 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub nsgt_scale: NsgtScale,
    pub fmin: f64,
    pub fmax: f64,
    pub sample_rate: f64,
}

impl TransformSpec {
    fn base(kind: TransformKind, nsgt_scale: NsgtScale) -> Self {
        Self {
            kind,
            window_ms: 40.0,
            hop_ms: 10.0,
            nsgt_scale,
            fmin: 30.0,
            fmax: 11000.0,
            sample_rate: TARGET_SAMPLE_RATE,
        }
    }

    /// Hamming-windowed STFT, 40 ms window, 10 ms hop.
    pub fn stft() -> Self {
        Self::base(TransformKind::Stft, NsgtScale::default())
    }

    /// Framed DCT-II with the STFT framing.
    pub fn dct() -> Self {
        Self::base(TransformKind::Dct, NsgtScale::default())
    }

    pub fn nsgt(scale: NsgtScale) -> Self {
        Self::base(TransformKind::Nsgt, scale)
    }

    /// Parse the command-line names `stft`, `dct`, `nsgt-cq`, `nsgt-mel`, `nsgt-erb`.
    pub fn from_name(name: &str) -> Result<Self, SpectralError> {
        Ok(match name {
            "stft" => Self::stft(),
            "dct" => Self::dct(),
            "nsgt-cq" | "nsgt-cqt" => Self::nsgt(NsgtScale::Cq { bins_per_octave: 48 }),
            "nsgt-mel" => Self::nsgt(NsgtScale::Mel { bins: 400 }),
            "nsgt-erb" => Self::nsgt(NsgtScale::Erb { bins: 400 }),
            other => return Err(SpectralError::InvalidSpec(format!("unknown transform `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.nsgt_scale) {
            (TransformKind::Stft, _) => "stft",
            (TransformKind::Dct, _) => "dct",
            (TransformKind::Nsgt, NsgtScale::Cq { .. }) => "nsgt-cq",
            (TransformKind::Nsgt, NsgtScale::Mel { .. }) => "nsgt-mel",
            (TransformKind::Nsgt, NsgtScale::Erb { .. }) => "nsgt-erb",
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidSpec(m));
        if !(self.sample_rate > 0.0) {
            return bad(format!("sample rate {} must be positive", self.sample_rate));
        }
        match self.kind {
            TransformKind::Stft | TransformKind::Dct => {
                if !(self.hop_ms > 0.0 && self.window_ms > self.hop_ms) {
                    return bad(format!(
                        "need window_ms > hop_ms > 0, got {} / {}",
                        self.window_ms, self.hop_ms
                    ));
                }
                if self.window_samples() < 2 || self.hop_samples() == 0 {
                    return bad(format!("window of {} samples is too short", self.window_samples()));
                }
            }
            TransformKind::Nsgt => {
                if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate / 2.0) {
                    return bad(format!(
                        "need 0 < fmin < fmax <= Nyquist, got {}..{} at {} Hz",
                        self.fmin, self.fmax, self.sample_rate
                    ));
                }
                let n = match self.nsgt_scale {
                    NsgtScale::Cq { bins_per_octave } => bins_per_octave,
                    NsgtScale::Mel { bins } | NsgtScale::Erb { bins } => bins,
                };
                if n < 2 {
                    return bad(format!("scale needs at least 2 bins, got {n}"));
                }
            }
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        Float::round(self.window_ms * self.sample_rate / 1000.0) as usize
    }

    pub fn hop_samples(&self) -> usize {
        Float::round(self.hop_ms * self.sample_rate / 1000.0) as usize
    }

    /// Number of bins `F` in one spectral frame.
    pub fn frame_len(&self) -> usize {
        match self.kind {
            TransformKind::Stft => self.window_samples() / 2 + 1,
            TransformKind::Dct => self.window_samples(),
            TransformKind::Nsgt => scale_frequencies(self).len(),
        }
    }

    /// Whether bin frequencies are physical (false for the DCT).
    pub fn has_physical_bins(&self) -> bool {
        self.kind != TransformKind::Dct
    }
}

/// One magnitude frame: the VAE's data point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub magnitudes: Vec<f64>,
    pub spec: TransformSpec,
    pub class_label: Option<String>,
    pub source_id: String,
}

impl SpectralFrame {
    pub fn new(
        magnitudes: Vec<f64>,
        spec: TransformSpec,
        class_label: Option<String>,
        source_id: impl Into<String>,
    ) -> Result<Self, SpectralError> {
        let expected = spec.frame_len();
        if magnitudes.len() != expected {
            return Err(SpectralError::FrameLength {
                expected,
                got: magnitudes.len(),
            });
        }
        if let Some(i) = magnitudes.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(SpectralError::BadMagnitude(i));
        }
        Ok(Self {
            magnitudes,
            spec,
            class_label,
            source_id: source_id.into(),
        })
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * Float::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (Float::powf(10.0, m / 2595.0) - 1.0)
}

/// Glasberg–Moore ERB-rate (number of ERBs below `f`).
pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * Float::log10(1.0 + 0.00437 * f)
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (Float::powf(10.0, e / 21.4) - 1.0) / 0.00437
}

fn linspace_mapped(lo: f64, hi: f64, n: usize, inverse: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..n)
        .map(|k| inverse(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

/// Centre frequencies of an NSGT scale between `fmin` and `fmax`.
///
/// Constant-Q yields `ceil(B·log2(fmax/fmin))` bins starting at `fmin`;
/// Mel and ERB yield exactly the requested count with both ends included.
pub fn scale_frequencies(spec: &TransformSpec) -> Vec<f64> {
    let (fmin, fmax) = (spec.fmin, spec.fmax);
    match spec.nsgt_scale {
        NsgtScale::Cq { bins_per_octave } => {
            let b = bins_per_octave as f64;
            let count = Float::ceil(b * Float::log2(fmax / fmin)) as usize;
            (0..count)
                .map(|k| fmin * Float::powf(2.0, k as f64 / b))
                .collect()
        }
        NsgtScale::Mel { bins } => {
            linspace_mapped(hz_to_mel(fmin), hz_to_mel(fmax), bins as usize, mel_to_hz)
        }
        NsgtScale::Erb { bins } => linspace_mapped(
            hz_to_erb_rate(fmin),
            hz_to_erb_rate(fmax),
            bins as usize,
            erb_rate_to_hz,
        ),
    }
}

/// Frequency in Hz attached to each frame bin.
///
/// STFT bin `k` sits at `k·sr/N` (bin 0 is DC). NSGT bins are the scale's
/// centre frequencies (bin 0 is `fmin`). DCT bin `k` maps to `k·sr/(2N)`;
/// that mapping is not a physical frequency and is only offered so
/// descriptors can be computed uniformly.
pub fn bin_frequencies(spec: &TransformSpec) -> Vec<f64> {
    match spec.kind {
        TransformKind::Stft => {
            let n = spec.window_samples();
            (0..=n / 2).map(|k| k as f64 * spec.sample_rate / n as f64).collect()
        }
        TransformKind::Dct => {
            let n = spec.window_samples();
            (0..n)
                .map(|k| k as f64 * spec.sample_rate / (2.0 * n as f64))
                .collect()
        }
        TransformKind::Nsgt => scale_frequencies(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cq_bin_count_matches_closed_form() {
        let spec = TransformSpec::nsgt(NsgtScale::Cq { bins_per_octave: 48 });
        let f = scale_frequencies(&spec);
        // 48·log2(11000/30) = 408.88…
        assert_eq!(f.len(), 409);
        assert!(f.windows(2).all(|w| w[1] > w[0]));
        assert!(*f.last().unwrap() <= 11000.0);
        let ratio = f[1] / f[0];
        for w in f.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn mel_and_erb_have_exactly_400_bins() {
        for scale in [NsgtScale::Mel { bins: 400 }, NsgtScale::Erb { bins: 400 }] {
            let f = scale_frequencies(&TransformSpec::nsgt(scale));
            assert_eq!(f.len(), 400);
            assert!(f.windows(2).all(|w| w[1] > w[0]));
            assert!((f[0] - 30.0).abs() < 1e-9);
            assert!((f[399] - 11000.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scale_maps_invert() {
        for f in [30.0, 440.0, 11000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
            assert!((erb_rate_to_hz(hz_to_erb_rate(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn stft_bin_spacing() {
        let spec = TransformSpec::stft();
        assert_eq!(spec.window_samples(), 882);
        let f = bin_frequencies(&spec);
        assert_eq!(f.len(), 442);
        assert_eq!(f[0], 0.0);
        assert!((f[1] - 25.0).abs() < 1e-12);
        assert_eq!(spec.frame_len(), 442);
    }

    #[test]
    fn dct_bins_are_half_spaced() {
        let spec = TransformSpec::dct();
        let f = bin_frequencies(&spec);
        assert_eq!(f.len(), 882);
        assert!((f[1] - 12.5).abs() < 1e-12);
        assert!(!spec.has_physical_bins());
    }

    #[test]
    fn spec_validation() {
        let mut s = TransformSpec::stft();
        s.hop_ms = 50.0;
        assert!(s.validate().is_err());
        let mut n = TransformSpec::nsgt(NsgtScale::default());
        n.fmax = 12000.0;
        assert!(n.validate().is_err());
        assert!(TransformSpec::from_name("nsgt-erb").unwrap().validate().is_ok());
        assert!(TransformSpec::from_name("wavelet").is_err());
    }

    #[test]
    fn frame_rejects_negative_magnitudes() {
        let spec = TransformSpec::nsgt(NsgtScale::Mel { bins: 4 });
        assert!(SpectralFrame::new(alloc::vec![0.0, 1.0, 2.0, 3.0], spec, None, "a").is_ok());
        assert_eq!(
            SpectralFrame::new(alloc::vec![0.0, -1.0, 2.0, 3.0], spec, None, "a"),
            Err(SpectralError::BadMagnitude(1))
        );
        assert!(SpectralFrame::new(alloc::vec![0.0; 3], spec, None, "a").is_err());
    }
}
