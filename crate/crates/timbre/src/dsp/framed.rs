use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use timbre_core::spectral::{TransformKind, TransformSpec};
use timbre_core::AudioBuffer;

use super::{DspError, Spectrogram};

/// Periodic Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / n as f64).cos())
        .collect()
}

/// Centred, Hamming-windowed framing shared by the STFT and the DCT.
///
/// The signal is zero-padded by half a window on the left, frame `t` covers
/// padded samples `t·hop .. t·hop + N`, so its centre sits at sample
/// `t·hop` of the original signal.
#[derive(Clone)]
pub struct FramedPlan {
    spec: TransformSpec,
    signal_len: usize,
    window: Vec<f64>,
    hop: usize,
    frames: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    // DCT runs through FFTs of twice the window length
    fft2: Arc<dyn Fft<f64>>,
    ifft2: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FramedPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FramedPlan")
            .field("spec", &self.spec)
            .field("signal_len", &self.signal_len)
            .field("hop", &self.hop)
            .field("frames", &self.frames)
            .finish()
    }
}

impl FramedPlan {
    pub fn new(spec: &TransformSpec, signal_len: usize) -> Result<Self, DspError> {
        spec.validate()?;
        let n = spec.window_samples();
        if signal_len < n {
            return Err(DspError::InputTooShort { needed: n, got: signal_len });
        }
        let hop = spec.hop_samples();
        let frames = 1 + (signal_len + hop - 1) / hop;
        let mut planner = FftPlanner::new();
        Ok(Self {
            spec: *spec,
            signal_len,
            window: hamming(n),
            hop,
            frames,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            fft2: planner.plan_fft_forward(2 * n),
            ifft2: planner.plan_fft_inverse(2 * n),
        })
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    fn check_len(&self, len: usize) -> Result<(), DspError> {
        if len < self.window.len() {
            return Err(DspError::InputTooShort { needed: self.window.len(), got: len });
        }
        if len != self.signal_len {
            return Err(DspError::PlanMismatch { expected: self.signal_len, got: len });
        }
        Ok(())
    }

    fn windowed_frames<'a>(&'a self, signal: &'a [f64]) -> impl Iterator<Item = Vec<f64>> + 'a {
        let n = self.window.len();
        let pad = n / 2;
        (0..self.frames).map(move |t| {
            (0..n)
                .map(|k| {
                    let idx = (t * self.hop + k) as isize - pad as isize;
                    if idx >= 0 && (idx as usize) < signal.len() {
                        signal[idx as usize] * self.window[k]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
    }

    /// Weighted overlap-add with `w / Σw²` normalization, the least-squares
    /// inverse of the windowed framing.
    fn overlap_add(&self, grains: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
        let n = self.window.len();
        let pad = n / 2;
        let mut out = vec![0.0; self.signal_len];
        let mut norm = vec![0.0; self.signal_len];
        for (t, grain) in grains.enumerate() {
            for k in 0..n {
                let idx = (t * self.hop + k) as isize - pad as isize;
                if idx >= 0 && (idx as usize) < self.signal_len {
                    let w = self.window[k];
                    out[idx as usize] += grain[k] * w;
                    norm[idx as usize] += w * w;
                }
            }
        }
        out.iter_mut().zip(&norm).for_each(|(o, s)| {
            if *s > 1e-12 {
                *o /= s
            }
        });
        out
    }

    fn check_frames(&self, sg: &Spectrogram, width: usize) -> Result<(), DspError> {
        if sg.signal_len != self.signal_len {
            return Err(DspError::PlanMismatch { expected: self.signal_len, got: sg.signal_len });
        }
        if sg.frames.len() != self.frames || sg.frames.iter().any(|f| f.len() != width) {
            return Err(DspError::Shape);
        }
        Ok(())
    }

    pub(crate) fn stft(&self, signal: &[f64]) -> Result<Spectrogram, DspError> {
        self.check_len(signal.len())?;
        let n = self.window.len();
        let frames = self
            .windowed_frames(signal)
            .map(|f| {
                let mut buf: Vec<Complex64> = f.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
                self.fft.process(&mut buf);
                buf.truncate(n / 2 + 1);
                buf
            })
            .collect();
        Ok(Spectrogram {
            frames,
            spec: self.spec,
            signal_len: self.signal_len,
            has_phase: true,
        })
    }

    pub(crate) fn istft(&self, sg: &Spectrogram) -> Result<Vec<f64>, DspError> {
        if !sg.has_phase {
            return Err(DspError::MissingPhase);
        }
        let n = self.window.len();
        self.check_frames(sg, n / 2 + 1)?;
        let grains = sg.frames.iter().map(|half| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            for k in half.len()..n {
                buf[k] = half[n - k].conj();
            }
            self.ifft.process(&mut buf);
            buf.iter().map(|c| c.re / n as f64).collect()
        });
        Ok(self.overlap_add(grains))
    }

    fn dct2_frame(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut buf: Vec<Complex64> = x
            .iter()
            .chain(x.iter().rev())
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.fft2.process(&mut buf);
        (0..n)
            .map(|k| {
                let rot = Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64);
                let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                0.5 * s * (rot * buf[k]).re
            })
            .collect()
    }

    fn dct3_frame(&self, c: &[f64]) -> Vec<f64> {
        let n = c.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            buf[k] = Complex64::from_polar(s * c[k], PI * k as f64 / (2 * n) as f64);
        }
        self.ifft2.process(&mut buf);
        buf[..n].iter().map(|v| v.re).collect()
    }

    pub(crate) fn dct(&self, signal: &[f64]) -> Result<Spectrogram, DspError> {
        self.check_len(signal.len())?;
        let frames = self
            .windowed_frames(signal)
            .map(|f| self.dct2_frame(&f).into_iter().map(|v| Complex64::new(v, 0.0)).collect())
            .collect();
        Ok(Spectrogram {
            frames,
            spec: self.spec,
            signal_len: self.signal_len,
            has_phase: true,
        })
    }

    /// Coefficients are read through their real part: the sign of a DCT
    /// coefficient plays the role of phase.
    pub(crate) fn idct(&self, sg: &Spectrogram) -> Result<Vec<f64>, DspError> {
        if !sg.has_phase {
            return Err(DspError::MissingPhase);
        }
        self.check_frames(sg, self.window.len())?;
        let grains = sg.frames.iter().map(|f| {
            let re: Vec<f64> = f.iter().map(|c| c.re).collect();
            self.dct3_frame(&re)
        });
        Ok(self.overlap_add(grains))
    }
}

/// Orthonormal DCT-II of one frame.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    dct_plan(x.len()).dct2_frame(x)
}

/// Orthonormal DCT-III, the inverse of [`dct_ii`].
pub fn dct_iii(c: &[f64]) -> Vec<f64> {
    dct_plan(c.len()).dct3_frame(c)
}

fn dct_plan(n: usize) -> FramedPlan {
    let mut planner = FftPlanner::new();
    FramedPlan {
        spec: TransformSpec::dct(),
        signal_len: n,
        window: vec![1.0; n],
        hop: 1,
        frames: 0,
        fft: planner.plan_fft_forward(n.max(1)),
        ifft: planner.plan_fft_inverse(n.max(1)),
        fft2: planner.plan_fft_forward(2 * n),
        ifft2: planner.plan_fft_inverse(2 * n),
    }
}

fn require(spec: &TransformSpec, kind: TransformKind) -> Result<(), DspError> {
    if spec.kind != kind {
        return Err(DspError::Unsupported(spec.kind));
    }
    Ok(())
}

pub fn stft_forward(audio: &AudioBuffer, spec: &TransformSpec) -> Result<Spectrogram, DspError> {
    require(spec, TransformKind::Stft)?;
    FramedPlan::new(spec, audio.len())?.stft(&audio.samples)
}

pub fn stft_inverse(sg: &Spectrogram) -> Result<AudioBuffer, DspError> {
    require(&sg.spec, TransformKind::Stft)?;
    if !sg.has_phase {
        return Err(DspError::MissingPhase);
    }
    let samples = FramedPlan::new(&sg.spec, sg.signal_len)?.istft(sg)?;
    Ok(AudioBuffer::new(samples, sg.spec.sample_rate)?)
}

pub fn dct_forward(audio: &AudioBuffer, spec: &TransformSpec) -> Result<Spectrogram, DspError> {
    require(spec, TransformKind::Dct)?;
    FramedPlan::new(spec, audio.len())?.dct(&audio.samples)
}

pub fn dct_inverse(sg: &Spectrogram) -> Result<AudioBuffer, DspError> {
    require(&sg.spec, TransformKind::Dct)?;
    if !sg.has_phase {
        return Err(DspError::MissingPhase);
    }
    let samples = FramedPlan::new(&sg.spec, sg.signal_len)?.idct(sg)?;
    Ok(AudioBuffer::new(samples, sg.spec.sample_rate)?)
}
