//! Greedy latent search for spectra whose descriptor follows a target curve.
//!
//! Starting from the posterior mean of an origin frame, each step samples a
//! neighbourhood around the current point, decodes every candidate and keeps
//! the one whose descriptor change best matches the target change.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::descriptors::{DescriptorError, DescriptorKind};
use crate::diff::Scalar;
use crate::latent::{BoxError, FrameRenderer, PcaProjection, PCA_DIMS};
use crate::rng::Rng;
use crate::spectral::AudioBuffer;
use crate::vae::{VaeError, VaeModel};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("target series is empty")]
    EmptyTarget,
    #[error("target series has a non-finite value at {0}")]
    NonFiniteTarget(usize),
    #[error("every candidate was discarded at step {0}")]
    StuckAtStep(usize),
    #[error("invalid neighbourhood: {0}")]
    InvalidNeighborhood(&'static str),
    #[error("PCA subspace sampling needs a fitted projection")]
    MissingPca,
    #[error("origin descriptor: {0}")]
    Origin(#[from] DescriptorError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("rendering failed: {0}")]
    Render(#[source] BoxError),
}

/// How target values relate to the descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TargetScale {
    /// Values are `t[1..N]` in descriptor units.
    Absolute,
    /// Values sample a curve over normalized time, first sample at the
    /// origin. The curve is resampled to `steps + 1` points and mapped to
    /// `t[i] = d_0 + span · (s(i/N) − s(0))`.
    Shape { span: f64, steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSeries {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
    pub scale: TargetScale,
}

impl TargetSeries {
    pub fn absolute(kind: DescriptorKind, values: Vec<f64>) -> Self {
        Self {
            kind,
            values,
            scale: TargetScale::Absolute,
        }
    }

    pub fn shape(kind: DescriptorKind, values: Vec<f64>, span: f64, steps: usize) -> Self {
        Self {
            kind,
            values,
            scale: TargetScale::Shape { span, steps },
        }
    }

    /// `t[0..=N]` with `t[0] = d_0`.
    pub fn resolve(&self, d0: f64) -> Result<Vec<f64>, SynthError> {
        if self.values.is_empty() {
            return Err(SynthError::EmptyTarget);
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(SynthError::NonFiniteTarget(i));
        }
        match self.scale {
            TargetScale::Absolute => {
                let mut t = Vec::with_capacity(self.values.len() + 1);
                t.push(d0);
                t.extend_from_slice(&self.values);
                Ok(t)
            }
            TargetScale::Shape { span, steps } => {
                if steps == 0 {
                    return Err(SynthError::EmptyTarget);
                }
                let s0 = self.values[0];
                Ok((0..=steps)
                    .map(|i| d0 + span * (sample_curve(&self.values, i as f64 / steps as f64) - s0))
                    .collect())
            }
        }
    }
}

/// Linear interpolation of equally spaced samples at `u ∈ [0, 1]`.
fn sample_curve(values: &[f64], u: f64) -> f64 {
    if values.len() == 1 {
        return values[0];
    }
    let pos = u.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let i = Float::floor(pos) as usize;
    if i + 1 >= values.len() {
        return values[values.len() - 1];
    }
    let f = pos - i as f64;
    values[i] + f * (values[i + 1] - values[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Gaussian,
    /// Regular lattice of offsets in `[−radius, radius]` along each axis.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    /// Perturb along the three PCA axes only.
    #[default]
    Pca,
    /// Perturb every latent coordinate.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub radius: f64,
    pub count: usize,
    pub sampling: Sampling,
    pub subspace: Subspace,
    pub beam_width: usize,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        Self {
            radius: 0.1,
            count: 64,
            sampling: Sampling::Gaussian,
            subspace: Subspace::Pca,
            beam_width: 1,
        }
    }
}

impl NeighborhoodSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(SynthError::InvalidNeighborhood("radius must be positive"));
        }
        if self.count < 2 {
            return Err(SynthError::InvalidNeighborhood("count must be at least 2"));
        }
        if self.beam_width == 0 {
            return Err(SynthError::InvalidNeighborhood("beam width must be positive"));
        }
        Ok(())
    }

    /// Candidate points around `z`; index 0 is `z` itself.
    pub fn candidates(&self, z: &[f64], pca: Option<&PcaProjection>, rng: &mut Rng) -> Result<Vec<Vec<f64>>, SynthError> {
        let dims = match self.subspace {
            Subspace::Pca => PCA_DIMS,
            Subspace::Full => z.len(),
        };
        let offsets: Vec<Vec<f64>> = match self.sampling {
            Sampling::Gaussian => (0..self.count)
                .map(|_| (0..dims).map(|_| self.radius * rng.normal()).collect())
                .collect(),
            Sampling::Grid => lattice(dims, self.count, self.radius),
        };
        let mut out = Vec::with_capacity(offsets.len() + 1);
        out.push(z.to_vec());
        for off in offsets {
            let cand = match self.subspace {
                Subspace::Pca => {
                    let pca = pca.ok_or(SynthError::MissingPca)?;
                    pca.offset(z, &[off[0], off[1], off[2]])
                }
                Subspace::Full => z.iter().zip(&off).map(|(a, b)| a + b).collect(),
            };
            out.push(cand);
        }
        Ok(out)
    }
}

/// Up to `count` non-zero lattice offsets with `levels^dims` nodes.
fn lattice(dims: usize, count: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut levels = 2usize;
    while (levels + 1).checked_pow(dims as u32).is_some_and(|n| n <= count + 1) {
        levels += 1;
    }
    let step = |i: usize| -radius + 2.0 * radius * i as f64 / (levels - 1) as f64;
    let mut out = Vec::new();
    let mut idx = vec![0usize; dims];
    'outer: loop {
        let off: Vec<f64> = idx.iter().map(|&i| step(i)).collect();
        if off.iter().any(|v| v.abs() > 1e-15) {
            out.push(off);
            if out.len() == count {
                break;
            }
        }
        for d in 0..dims {
            idx[d] += 1;
            if idx[d] < levels {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResult {
    pub kind: DescriptorKind,
    /// Decoded frames for steps `1..=N`.
    pub frames: Vec<Vec<f64>>,
    /// `z_0..z_N`.
    pub path: Vec<Vec<f64>>,
    /// `d_0..d_N`.
    pub achieved: Vec<f64>,
    /// `t[0..N]`.
    pub targets: Vec<f64>,
    /// Selection cost of the chosen candidate at each step.
    pub deltas: Vec<f64>,
    /// Candidates dropped because their descriptor was undefined.
    pub discarded: usize,
}

impl SynthResult {
    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    /// `Σ |(d_i − d_{i−1}) − (t_i − t_{i−1})|`.
    pub fn step_error(&self) -> f64 {
        (1..self.achieved.len())
            .map(|i| ((self.achieved[i] - self.achieved[i - 1]) - (self.targets[i] - self.targets[i - 1])).abs())
            .sum()
    }

    /// Pearson correlation of achieved and target values over steps `1..=N`.
    pub fn correlation(&self) -> f64 {
        pearson(&self.achieved[1..], &self.targets[1..])
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / Float::sqrt(saa * sbb)
}

/// Algorithm inputs that do not change between steps.
pub struct SynthContext<'m, T: Scalar> {
    pub model: &'m VaeModel<T>,
    pub pca: Option<&'m PcaProjection>,
    /// Hz attached to each frame bin.
    pub freqs: &'m [f64],
}

#[derive(Clone)]
struct Beam {
    path: Vec<Vec<f64>>,
    achieved: Vec<f64>,
    frames: Vec<Vec<f64>>,
    deltas: Vec<f64>,
    cost: f64,
}

/// Run the greedy (or beam) search from the origin frame `x0`.
pub fn descriptor_synth<T: Scalar>(
    ctx: &SynthContext<'_, T>,
    x0: &[f64],
    target: &TargetSeries,
    nbh: &NeighborhoodSpec,
    rng: &mut Rng,
) -> Result<SynthResult, SynthError> {
    nbh.validate()?;
    if nbh.subspace == Subspace::Pca && ctx.pca.is_none() {
        return Err(SynthError::MissingPca);
    }
    let kind = target.kind;
    let d0 = kind.eval(x0, ctx.freqs)?;
    let t = target.resolve(d0)?;
    let z0 = ctx.model.encode_mean_rows(&[x0.to_vec()])?.remove(0);

    let mut beams = vec![Beam {
        path: vec![z0],
        achieved: vec![d0],
        frames: Vec::new(),
        deltas: Vec::new(),
        cost: 0.0,
    }];
    let mut discarded = 0;
    for i in 1..t.len() {
        let wanted = t[i] - t[i - 1];
        // (cost, beam, candidate, z, d, frame, delta)
        let mut pool = Vec::new();
        for (b, beam) in beams.iter().enumerate() {
            let z_prev = &beam.path[beam.path.len() - 1];
            let d_prev = beam.achieved[beam.achieved.len() - 1];
            let cands = nbh.candidates(z_prev, ctx.pca, rng)?;
            let decoded = ctx.model.decode_rows(&cands)?;
            for (c, (z, frame)) in cands.into_iter().zip(decoded).enumerate() {
                let Ok(d) = kind.eval(&frame, ctx.freqs) else {
                    discarded += 1;
                    continue;
                };
                let delta = ((d - d_prev) - wanted).powi(2);
                pool.push((beam.cost + delta, b, c, z, d, frame, delta));
            }
        }
        if pool.is_empty() {
            return Err(SynthError::StuckAtStep(i));
        }
        pool.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        pool.truncate(nbh.beam_width);
        beams = pool
            .into_iter()
            .map(|(cost, b, _, z, d, frame, delta)| {
                let mut next = beams[b].clone();
                next.path.push(z);
                next.achieved.push(d);
                next.frames.push(frame);
                next.deltas.push(delta);
                next.cost = cost;
                next
            })
            .collect();
    }
    let best = beams.swap_remove(0);
    Ok(SynthResult {
        kind,
        frames: best.frames,
        path: best.path,
        achieved: best.achieved,
        targets: t,
        deltas: best.deltas,
        discarded,
    })
}

pub fn render_synth(result: &SynthResult, renderer: &dyn FrameRenderer) -> Result<AudioBuffer, SynthError> {
    if result.frames.is_empty() {
        return Err(SynthError::EmptyTarget);
    }
    renderer.render(&result.frames).map_err(SynthError::Render)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::fit_pca;
    use crate::vae::VaeArchitecture;

    fn setup() -> (VaeModel<f64>, PcaProjection, Vec<f64>, Vec<f64>) {
        let mut rng = Rng::new(11);
        let model = VaeModel::<f64>::new(VaeArchitecture::new(16, vec![12], 4).unwrap(), &mut rng);
        let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let pca = fit_pca(&pts).unwrap();
        let freqs: Vec<f64> = (0..16).map(|k| 50.0 * (k + 1) as f64).collect();
        let x0: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
        (model, pca, freqs, x0)
    }

    #[test]
    fn constant_target_stays_put() {
        let (model, pca, freqs, x0) = setup();
        let ctx = SynthContext { model: &model, pca: Some(&pca), freqs: &freqs };
        let d0 = DescriptorKind::Centroid.eval(&x0, &freqs).unwrap();
        let target = TargetSeries::absolute(DescriptorKind::Centroid, vec![d0; 5]);
        let r = descriptor_synth(&ctx, &x0, &target, &NeighborhoodSpec::default(), &mut Rng::new(1)).unwrap();
        // the first move lands on the decode of z_0, after which staying is exact
        for i in 2..r.path.len() {
            assert_eq!(r.path[i], r.path[1]);
            assert_eq!(r.deltas[i - 1], 0.0);
        }
        assert_eq!(r.path.len(), 6);
        assert_eq!(r.frames.len(), 5);
    }

    #[test]
    fn argmin_picks_the_closer_delta() {
        // candidate deltas +10 and +50 against a wanted +12
        let costs = [(10.0f64 - 12.0).powi(2), (50.0f64 - 12.0).powi(2)];
        assert!(costs[0] < costs[1]);
        let (model, pca, freqs, x0) = setup();
        let ctx = SynthContext { model: &model, pca: Some(&pca), freqs: &freqs };
        let d0 = DescriptorKind::Centroid.eval(&x0, &freqs).unwrap();
        let target = TargetSeries::absolute(DescriptorKind::Centroid, vec![d0 + 12.0]);
        let nbh = NeighborhoodSpec { count: 32, ..Default::default() };
        let r = descriptor_synth(&ctx, &x0, &target, &nbh, &mut Rng::new(2)).unwrap();

        // recompute every candidate's cost and confirm the chosen one is minimal
        let mut rng = Rng::new(2);
        let cands = nbh.candidates(&r.path[0], Some(&pca), &mut rng).unwrap();
        let decoded = model.decode_rows(&cands).unwrap();
        let best = decoded
            .iter()
            .map(|f| ((DescriptorKind::Centroid.eval(f, &freqs).unwrap() - d0) - 12.0).powi(2))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.deltas[0], best);
        assert!(cands.contains(&r.path[1]));
        // staying put would have cost 144 plus the decode mismatch at most
        assert!(r.deltas[0] <= ((DescriptorKind::Centroid.eval(&decoded[0], &freqs).unwrap() - d0) - 12.0).powi(2));
    }

    #[test]
    fn shape_targets_anchor_at_the_origin() {
        let t = TargetSeries::shape(DescriptorKind::Centroid, vec![1.0, 0.0], 400.0, 4);
        let r = t.resolve(1000.0).unwrap();
        assert_eq!(r, vec![1000.0, 900.0, 800.0, 700.0, 600.0]);
        let a = TargetSeries::absolute(DescriptorKind::Bandwidth, vec![5.0, 6.0]);
        assert_eq!(a.resolve(4.0).unwrap(), vec![4.0, 5.0, 6.0]);
        assert!(matches!(
            TargetSeries::absolute(DescriptorKind::Centroid, vec![]).resolve(0.0),
            Err(SynthError::EmptyTarget)
        ));
    }

    #[test]
    fn search_is_deterministic_and_beam_search_runs() {
        let (model, pca, freqs, x0) = setup();
        let ctx = SynthContext { model: &model, pca: Some(&pca), freqs: &freqs };
        let target = TargetSeries::shape(DescriptorKind::Centroid, vec![1.0, 0.0], -150.0, 6);
        let nbh = NeighborhoodSpec { radius: 0.5, ..Default::default() };
        let a = descriptor_synth(&ctx, &x0, &target, &nbh, &mut Rng::new(3)).unwrap();
        let b = descriptor_synth(&ctx, &x0, &target, &nbh, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.deltas.iter().sum();
        let wide = descriptor_synth(&ctx, &x0, &target, &NeighborhoodSpec { beam_width: 4, ..nbh }, &mut Rng::new(3))
            .unwrap();
        assert!(wide.deltas.iter().sum::<f64>().is_finite());
        assert!(total.is_finite());
    }

    #[test]
    fn full_space_and_grid_sampling() {
        let (model, _, freqs, x0) = setup();
        let ctx = SynthContext { model: &model, pca: None, freqs: &freqs };
        let target = TargetSeries::absolute(DescriptorKind::Bandwidth, vec![100.0, 90.0]);
        let nbh = NeighborhoodSpec {
            subspace: Subspace::Full,
            sampling: Sampling::Grid,
            count: 80,
            ..Default::default()
        };
        let r = descriptor_synth(&ctx, &x0, &target, &nbh, &mut Rng::new(0)).unwrap();
        assert_eq!(r.path.len(), 3);
        assert!(matches!(
            descriptor_synth(&ctx, &x0, &target, &NeighborhoodSpec::default(), &mut Rng::new(0)),
            Err(SynthError::MissingPca)
        ));
        let grid = lattice(3, 26, 1.0);
        assert_eq!(grid.len(), 26);
        assert!(grid.iter().all(|o| o.iter().all(|v| [-1.0, 0.0, 1.0].contains(v))));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
