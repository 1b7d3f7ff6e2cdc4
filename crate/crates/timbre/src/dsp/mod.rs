//! Invertible spectral analysis and synthesis.
//!
//! Every transform produces a [`Spectrogram`]: a time-ordered list of
//! complex coefficient vectors. Short-time transforms (STFT and DCT) share a
//! centred, Hamming-windowed framing; the NSGT works on the whole signal in
//! the frequency domain and is rasterized onto one uniform time grid.

mod framed;
mod griffin_lim;
mod nsgt;
mod resample;

pub use framed::{dct_forward, dct_inverse, dct_ii, dct_iii, hamming, stft_forward, stft_inverse, FramedPlan};
pub use griffin_lim::{griffin_lim, spectral_convergence, GriffinLimConfig, GriffinLimOutput, InitialPhase};
pub use nsgt::{nsgt_design, nsgt_forward, nsgt_inverse, NsgtPlan};
pub use resample::{resample, Resampler, RESAMPLER_TAPS};

use rustfft::num_complex::Complex64;
use timbre_core::spectral::{SpectralError, SpectralFrame, TransformKind, TransformSpec};
use timbre_core::AudioBuffer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DspError {
    #[error("audio has {got} samples, one window needs {needed}")]
    InputTooShort { needed: usize, got: usize },
    #[error("spectrogram carries magnitudes only")]
    MissingPhase,
    #[error("NSGT windows leave frequency bin {bin} uncovered")]
    NotPainless { bin: usize },
    #[error("plan was designed for {expected} samples, got {got}")]
    PlanMismatch { expected: usize, got: usize },
    #[error("{at_ms} ms lies outside the {duration_ms} ms signal")]
    OutOfRange { at_ms: f64, duration_ms: f64 },
    #[error("every frame in the corpus is zero")]
    DegenerateCorpus,
    #[error("transform kind {0:?} does not match the plan")]
    Unsupported(TransformKind),
    #[error("spectrogram frames have inconsistent shape")]
    Shape,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Coefficients of one transform of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub spec: TransformSpec,
    /// Length in samples of the analysed signal.
    pub signal_len: usize,
    /// False when only magnitudes are stored (imaginary parts are zero).
    pub has_phase: bool,
}

impl Spectrogram {
    pub fn from_magnitudes(mags: &[Vec<f64>], spec: TransformSpec, signal_len: usize) -> Self {
        Self {
            frames: mags
                .iter()
                .map(|f| f.iter().map(|&m| Complex64::new(m, 0.0)).collect())
                .collect(),
            spec,
            signal_len,
            has_phase: false,
        }
    }

    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.iter().map(|c| c.norm()).collect()).collect()
    }

    pub fn magnitude_only(&self) -> Self {
        Self::from_magnitudes(&self.magnitudes(), self.spec, self.signal_len)
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// A designed forward/inverse pair for one signal length.
#[derive(Debug, Clone)]
pub enum TransformPlan {
    Stft(FramedPlan),
    Dct(FramedPlan),
    Nsgt(NsgtPlan),
}

impl TransformPlan {
    pub fn new(spec: &TransformSpec, signal_len: usize) -> Result<Self, DspError> {
        spec.validate()?;
        Ok(match spec.kind {
            TransformKind::Stft => Self::Stft(FramedPlan::new(spec, signal_len)?),
            TransformKind::Dct => Self::Dct(FramedPlan::new(spec, signal_len)?),
            TransformKind::Nsgt => Self::Nsgt(nsgt_design(spec, spec.sample_rate, signal_len)?),
        })
    }

    pub fn spec(&self) -> &TransformSpec {
        match self {
            Self::Stft(p) | Self::Dct(p) => p.spec(),
            Self::Nsgt(p) => p.spec(),
        }
    }

    pub fn signal_len(&self) -> usize {
        match self {
            Self::Stft(p) | Self::Dct(p) => p.signal_len(),
            Self::Nsgt(p) => p.signal_len(),
        }
    }

    pub fn forward(&self, signal: &[f64]) -> Result<Spectrogram, DspError> {
        match self {
            Self::Stft(p) => p.stft(signal),
            Self::Dct(p) => p.dct(signal),
            Self::Nsgt(p) => p.forward(signal),
        }
    }

    pub fn inverse(&self, sg: &Spectrogram) -> Result<Vec<f64>, DspError> {
        if sg.spec.kind != self.spec().kind {
            return Err(DspError::Unsupported(sg.spec.kind));
        }
        match self {
            Self::Stft(p) => p.istft(sg),
            Self::Dct(p) => p.idct(sg),
            Self::Nsgt(p) => p.inverse(sg),
        }
    }

    pub fn frame_count(&self) -> usize {
        match self {
            Self::Stft(p) | Self::Dct(p) => p.frame_count(),
            Self::Nsgt(p) => p.frame_count(),
        }
    }

    /// Coefficients per frame, including the NSGT's DC and Nyquist bands.
    pub fn coefficient_count(&self) -> usize {
        match self {
            Self::Stft(p) => p.window_len() / 2 + 1,
            Self::Dct(p) => p.window_len(),
            Self::Nsgt(p) => p.band_count(),
        }
    }

    /// Distance in samples between consecutive frame centres.
    pub fn hop(&self) -> f64 {
        match self {
            Self::Stft(p) | Self::Dct(p) => p.hop() as f64,
            Self::Nsgt(p) => p.hop(),
        }
    }

    /// Centre of frame `i` in samples from the signal start.
    pub fn frame_center(&self, i: usize) -> f64 {
        i as f64 * self.hop()
    }

    /// Coefficient weights under which the inverse is a least-squares
    /// projection; used by the spectral convergence norm.
    pub fn coefficient_weights(&self) -> Vec<f64> {
        let n = self.coefficient_count();
        match self {
            Self::Stft(p) => (0..n)
                .map(|k| if k == 0 || 2 * k == p.window_len() { 1.0 } else { 2.0 })
                .collect(),
            Self::Dct(_) | Self::Nsgt(_) => vec![1.0; n],
        }
    }

    /// Range of coefficient indices that form a model frame. The NSGT's
    /// DC and Nyquist bands are excluded.
    pub fn model_bins(&self) -> std::ops::Range<usize> {
        match self {
            Self::Nsgt(p) => 1..p.band_count() - 1,
            _ => 0..self.coefficient_count(),
        }
    }

    /// Expand a model frame to a full coefficient vector (zeros outside the
    /// model bins).
    pub fn embed_model_frame(&self, frame: &[f64]) -> Result<Vec<f64>, DspError> {
        let range = self.model_bins();
        if frame.len() != range.len() {
            return Err(DspError::Spectral(SpectralError::FrameLength {
                expected: range.len(),
                got: frame.len(),
            }));
        }
        let mut full = vec![0.0; self.coefficient_count()];
        full[range].copy_from_slice(frame);
        Ok(full)
    }
}

/// Analyse `audio` with the transform described by `spec`.
pub fn analyze(audio: &AudioBuffer, spec: &TransformSpec) -> Result<(TransformPlan, Spectrogram), DspError> {
    if audio.sample_rate != spec.sample_rate {
        return Err(SpectralError::InvalidAudio(format!(
            "audio at {} Hz, transform expects {} Hz",
            audio.sample_rate, spec.sample_rate
        ))
        .into());
    }
    let plan = TransformPlan::new(spec, audio.len())?;
    let sg = plan.forward(&audio.samples)?;
    Ok((plan, sg))
}

/// Index of the frame nearest `at_ms`.
pub fn frame_index(plan: &TransformPlan, at_ms: f64) -> Result<usize, DspError> {
    let sr = plan.spec().sample_rate;
    let duration_ms = plan.signal_len() as f64 * 1000.0 / sr;
    if !(at_ms >= 0.0 && at_ms <= duration_ms) {
        return Err(DspError::OutOfRange { at_ms, duration_ms });
    }
    let idx = (at_ms * sr / 1000.0 / plan.hop()).round() as usize;
    if idx >= plan.frame_count() {
        return Err(DspError::OutOfRange { at_ms, duration_ms });
    }
    Ok(idx)
}

/// Magnitudes of the frame nearest `at_ms`, restricted to the model bins.
pub fn extract_frame(
    plan: &TransformPlan,
    sg: &Spectrogram,
    at_ms: f64,
    class_label: Option<String>,
    source_id: &str,
) -> Result<SpectralFrame, DspError> {
    let idx = frame_index(plan, at_ms)?;
    let frame = sg.frames.get(idx).ok_or(DspError::Shape)?;
    let mags: Vec<f64> = frame[plan.model_bins()].iter().map(|c| c.norm()).collect();
    Ok(SpectralFrame::new(mags, sg.spec, class_label, source_id)?)
}

/// Divide every magnitude by the corpus-wide maximum. Returns that maximum.
pub fn corpus_normalize(frames: &mut [SpectralFrame]) -> Result<f64, DspError> {
    let max = frames
        .iter()
        .flat_map(|f| f.magnitudes.iter().copied())
        .fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(DspError::DegenerateCorpus);
    }
    for f in frames.iter_mut() {
        f.magnitudes.iter_mut().for_each(|m| *m /= max);
    }
    Ok(max)
}

pub fn denormalize(magnitudes: &[f64], norm_constant: f64) -> Vec<f64> {
    magnitudes.iter().map(|m| m * norm_constant).collect()
}

/// Lay model frames out in time, `segment_ms` each, and build the target
/// magnitude spectrogram of a signal covering all of them.
pub fn tile_frames(
    frames: &[Vec<f64>],
    spec: &TransformSpec,
    segment_ms: f64,
) -> Result<(TransformPlan, Spectrogram), DspError> {
    if frames.is_empty() {
        return Err(DspError::Shape);
    }
    let seg = (segment_ms * spec.sample_rate / 1000.0).max(1.0);
    let mut len = (seg * frames.len() as f64).round() as usize;
    if matches!(spec.kind, TransformKind::Stft | TransformKind::Dct) {
        len = len.max(spec.window_samples());
    }
    let plan = TransformPlan::new(spec, len.max(2))?;
    let full: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| plan.embed_model_frame(f))
        .collect::<Result<_, _>>()?;
    let mags: Vec<Vec<f64>> = (0..plan.frame_count())
        .map(|t| {
            let p = ((plan.frame_center(t) / seg) as usize).min(frames.len() - 1);
            full[p].clone()
        })
        .collect();
    let sg = Spectrogram::from_magnitudes(&mags, *spec, plan.signal_len());
    Ok((plan, sg))
}

#[cfg(test)]
mod tests;
