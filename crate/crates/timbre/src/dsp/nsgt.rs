use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use timbre_core::spectral::{scale_frequencies, TransformKind, TransformSpec};
use timbre_core::AudioBuffer;

use super::{DspError, Spectrogram};

/// One frequency-domain window: Hann-shaped values on consecutive bins.
#[derive(Debug, Clone, PartialEq)]
struct Band {
    center_hz: f64,
    /// Integer bin the window is shifted to before the size-M inverse FFT.
    shift: usize,
    first_bin: usize,
    values: Vec<f64>,
}

/// Painless NSGT for one signal length.
///
/// Bands are a DC lowpass, one Hann window per scale frequency and a
/// Nyquist highpass. Each window's half-width equals the larger gap to its
/// neighbours, so adjacent windows overlap and the frame operator
/// `S(ν) = Σ_k g_k(ν)²` is positive everywhere. All bands share the
/// coefficient count `M` (the widest support), which puts every band on the
/// same uniform time grid with hop `L / M`.
#[derive(Clone)]
pub struct NsgtPlan {
    spec: TransformSpec,
    signal_len: usize,
    bands: Vec<Band>,
    m: usize,
    /// Diagonal of the frame operator over bins `0..=L/2`.
    frame_diag: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    fft_m: Arc<dyn Fft<f64>>,
    ifft_m: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NsgtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NsgtPlan")
            .field("spec", &self.spec)
            .field("signal_len", &self.signal_len)
            .field("bands", &self.bands.len())
            .field("m", &self.m)
            .finish()
    }
}

fn hann_band(center_hz: f64, half_width_hz: f64, bin_hz: f64, last_bin: usize) -> Band {
    let c = center_hz / bin_hz;
    let hw = (half_width_hz / bin_hz).max(1.0);
    let lo = (c - hw).ceil().max(0.0) as usize;
    let hi = ((c + hw).floor() as usize).min(last_bin);
    let values = (lo..=hi)
        .map(|nu| {
            let r = (nu as f64 - c) / hw;
            if r.abs() < 1.0 {
                0.5 * (1.0 + (PI * r).cos())
            } else {
                0.0
            }
        })
        .collect();
    Band {
        center_hz,
        shift: (c.round() as usize).min(last_bin),
        first_bin: lo,
        values,
    }
}

pub fn nsgt_design(spec: &TransformSpec, sample_rate: f64, signal_len: usize) -> Result<NsgtPlan, DspError> {
    if spec.kind != TransformKind::Nsgt {
        return Err(DspError::Unsupported(spec.kind));
    }
    let mut spec = *spec;
    spec.sample_rate = sample_rate;
    spec.validate()?;
    if signal_len < 2 {
        return Err(DspError::InputTooShort { needed: 2, got: signal_len });
    }
    let nyquist = sample_rate / 2.0;
    let bin_hz = sample_rate / signal_len as f64;
    let last_bin = signal_len / 2;
    let freqs = scale_frequencies(&spec);
    let k = freqs.len();

    let mut bands = Vec::with_capacity(k + 2);
    bands.push(hann_band(0.0, freqs[0], bin_hz, last_bin));
    for i in 0..k {
        let left = if i == 0 { freqs[0] } else { freqs[i] - freqs[i - 1] };
        let right = if i + 1 == k { nyquist - freqs[i] } else { freqs[i + 1] - freqs[i] };
        bands.push(hann_band(freqs[i], left.max(right), bin_hz, last_bin));
    }
    bands.push(hann_band(nyquist, nyquist - freqs[k - 1], bin_hz, last_bin));

    let mut frame_diag = vec![0.0; last_bin + 1];
    for b in &bands {
        for (j, g) in b.values.iter().enumerate() {
            frame_diag[b.first_bin + j] += g * g;
        }
    }
    if let Some(bin) = frame_diag.iter().position(|&s| !(s > 1e-10)) {
        return Err(DspError::NotPainless { bin });
    }
    let m = bands.iter().map(|b| b.values.len()).max().unwrap_or(1);

    let mut planner = FftPlanner::new();
    Ok(NsgtPlan {
        spec,
        signal_len,
        bands,
        m,
        frame_diag,
        fft: planner.plan_fft_forward(signal_len),
        ifft: planner.plan_fft_inverse(signal_len),
        fft_m: planner.plan_fft_forward(m),
        ifft_m: planner.plan_fft_inverse(m),
    })
}

impl NsgtPlan {
    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Scale bands plus the DC and Nyquist bands.
    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band_centers(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center_hz).collect()
    }

    /// Coefficients per band, which is also the number of time frames.
    pub fn frame_count(&self) -> usize {
        self.m
    }

    pub fn hop(&self) -> f64 {
        self.signal_len as f64 / self.m as f64
    }

    /// `Σ_k g_k(ν)²` for `ν = 0..=L/2`.
    pub fn frame_operator_diagonal(&self) -> &[f64] {
        &self.frame_diag
    }

    pub(crate) fn forward(&self, signal: &[f64]) -> Result<Spectrogram, DspError> {
        if signal.len() != self.signal_len {
            return Err(DspError::PlanMismatch { expected: self.signal_len, got: signal.len() });
        }
        let mut spectrum: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut spectrum);
        let m = self.m;
        let zero = Complex64::new(0.0, 0.0);
        let mut frames = vec![vec![zero; self.bands.len()]; m];
        let mut buf = vec![zero; m];
        for (k, band) in self.bands.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = zero);
            for (j, g) in band.values.iter().enumerate() {
                let nu = band.first_bin + j;
                buf[(nu + m - band.shift % m) % m] = spectrum[nu] * g;
            }
            self.ifft_m.process(&mut buf);
            for (t, v) in buf.iter().enumerate() {
                frames[t][k] = v / m as f64;
            }
        }
        Ok(Spectrogram {
            frames,
            spec: self.spec,
            signal_len: self.signal_len,
            has_phase: true,
        })
    }

    pub(crate) fn inverse(&self, sg: &Spectrogram) -> Result<Vec<f64>, DspError> {
        if !sg.has_phase {
            return Err(DspError::MissingPhase);
        }
        if sg.signal_len != self.signal_len {
            return Err(DspError::PlanMismatch { expected: self.signal_len, got: sg.signal_len });
        }
        let m = self.m;
        if sg.frames.len() != m || sg.frames.iter().any(|f| f.len() != self.bands.len()) {
            return Err(DspError::Shape);
        }
        let zero = Complex64::new(0.0, 0.0);
        let n = self.signal_len;
        let mut spectrum = vec![zero; n];
        let mut buf = vec![zero; m];
        for (k, band) in self.bands.iter().enumerate() {
            for (t, v) in buf.iter_mut().enumerate() {
                *v = sg.frames[t][k];
            }
            self.fft_m.process(&mut buf);
            for (j, g) in band.values.iter().enumerate() {
                let nu = band.first_bin + j;
                spectrum[nu] += buf[(nu + m - band.shift % m) % m] * g;
            }
        }
        let half = n / 2;
        for nu in 0..=half {
            spectrum[nu] /= self.frame_diag[nu];
        }
        for nu in half + 1..n {
            spectrum[nu] = spectrum[n - nu].conj();
        }
        self.ifft.process(&mut spectrum);
        Ok(spectrum.iter().map(|c| c.re / n as f64).collect())
    }
}

pub fn nsgt_forward(audio: &AudioBuffer, plan: &NsgtPlan) -> Result<Spectrogram, DspError> {
    plan.forward(&audio.samples)
}

pub fn nsgt_inverse(sg: &Spectrogram, plan: &NsgtPlan) -> Result<AudioBuffer, DspError> {
    let samples = plan.inverse(sg)?;
    Ok(AudioBuffer::new(samples, plan.spec.sample_rate)?)
}
