use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use timbre_core::Rng;

use super::{DspError, Spectrogram, TransformPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialPhase {
    Zero,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GriffinLimConfig {
    pub iterations: usize,
    pub initial_phase: InitialPhase,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            initial_phase: InitialPhase::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GriffinLimOutput {
    pub samples: Vec<f64>,
    /// `errors[i]` is the spectral convergence of the signal after `i + 1`
    /// inverse transforms; the last entry belongs to `samples`.
    pub errors: Vec<f64>,
}

/// `‖|C| − T‖_w / ‖T‖_w`, zero when the target is silent.
pub fn spectral_convergence(achieved: &Spectrogram, target: &[Vec<f64>], weights: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (frame, t) in achieved.frames.iter().zip(target) {
        for ((c, &m), w) in frame.iter().zip(t).zip(weights) {
            let d = c.norm() - m;
            num += w * d * d;
            den += w * m * m;
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Alternate between the consistent signals of `plan` and the set of
/// coefficients with the target magnitudes.
///
/// Because the inverse transform is a least-squares projection under the
/// plan's coefficient weights, the spectral convergence never increases.
pub fn griffin_lim(
    target: &Spectrogram,
    plan: &TransformPlan,
    config: &GriffinLimConfig,
) -> Result<GriffinLimOutput, DspError> {
    if target.spec.kind != plan.spec().kind {
        return Err(DspError::Unsupported(target.spec.kind));
    }
    let mags = target.magnitudes();
    let mut coeffs = Spectrogram {
        frames: mags
            .iter()
            .map(|f| f.iter().map(|&m| Complex64::new(m, 0.0)).collect())
            .collect(),
        spec: target.spec,
        signal_len: target.signal_len,
        has_phase: true,
    };
    if let InitialPhase::Random { seed } = config.initial_phase {
        let mut rng = Rng::new(seed);
        let real_only = plan.spec().kind == timbre_core::TransformKind::Dct;
        for c in coeffs.frames.iter_mut().flatten() {
            *c = if real_only {
                if rng.uniform() < 0.5 { -*c } else { *c }
            } else {
                Complex64::from_polar(c.re, 2.0 * std::f64::consts::PI * rng.uniform())
            };
        }
    }
    let weights = plan.coefficient_weights();
    let mut errors = Vec::with_capacity(config.iterations);
    let mut samples = plan.inverse(&coeffs)?;
    for it in 0..config.iterations.max(1) {
        if it > 0 {
            samples = plan.inverse(&coeffs)?;
        }
        let achieved = plan.forward(&samples)?;
        errors.push(spectral_convergence(&achieved, &mags, &weights));
        for ((dst, src), t) in coeffs.frames.iter_mut().zip(&achieved.frames).zip(&mags) {
            for ((d, s), &m) in dst.iter_mut().zip(src).zip(t) {
                let n = s.norm();
                *d = if n > 0.0 { s * (m / n) } else { Complex64::new(m, 0.0) };
            }
        }
    }
    Ok(GriffinLimOutput { samples, errors })
}
