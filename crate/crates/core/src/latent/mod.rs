//! Post-training analysis of the latent space: PCA views, out-of-domain
//! encoding, interpolated paths and descriptor grids.

mod pca;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::descriptors::{spectral_bandwidth, spectral_centroid};
use crate::diff::Scalar;
use crate::linalg::LinalgError;
use crate::spectral::{AudioBuffer, SpectralFrame, TransformSpec};
use crate::vae::{VaeError, VaeModel};

pub use pca::{fit_pca, PcaProjection, PCA_DIMS};

pub type BoxError = Box<dyn core::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error("need at least 4 latent points, got {0}")]
    TooFewPoints(usize),
    #[error("latent dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("frame {source_id:?} was produced by {got}, model expects {expected}")]
    PlanMismatch {
        source_id: alloc::string::String,
        expected: &'static str,
        got: &'static str,
    },
    #[error("empty split")]
    EmptySplit,
    #[error("a path needs at least 2 points, got {0}")]
    PathTooShort(usize),
    #[error("rendering failed: {0}")]
    Render(#[source] BoxError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Turns decoded magnitude frames into audio, one frame per time slot.
/// Implementations own de-normalization, tiling and phase recovery.
pub trait FrameRenderer {
    fn render(&self, frames: &[Vec<f64>]) -> Result<AudioBuffer, BoxError>;
}

/// Posterior means of frames from classes the model never saw, and their centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSet {
    pub points: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
}

pub fn encode_out_of_domain<T: Scalar>(
    model: &VaeModel<T>,
    spec: &TransformSpec,
    frames: &[SpectralFrame],
) -> Result<EncodedSet, LatentError> {
    if frames.is_empty() {
        return Err(LatentError::EmptySplit);
    }
    if let Some(f) = frames.iter().find(|f| f.spec != *spec) {
        return Err(LatentError::PlanMismatch {
            source_id: f.source_id.clone(),
            expected: spec.name(),
            got: f.spec.name(),
        });
    }
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| f.magnitudes.clone()).collect();
    let points = model.encode_mean_rows(&rows)?;
    let d = points[0].len();
    let mut centroid = vec![0.0; d];
    for p in &points {
        centroid.iter_mut().zip(p).for_each(|(c, v)| *c += v / points.len() as f64);
    }
    Ok(EncodedSet { points, centroid })
}

/// Piecewise-linear path through latent waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub waypoints: Vec<Vec<f64>>,
    /// Steps from one waypoint to the next.
    pub samples_per_segment: usize,
}

impl LatentPath {
    pub fn new(waypoints: Vec<Vec<f64>>, samples_per_segment: usize) -> Result<Self, LatentError> {
        if waypoints.len() < 2 {
            return Err(LatentError::PathTooShort(waypoints.len()));
        }
        let d = waypoints[0].len();
        if let Some(w) = waypoints.iter().find(|w| w.len() != d) {
            return Err(LatentError::Dimension { expected: d, got: w.len() });
        }
        Ok(Self {
            waypoints,
            samples_per_segment: samples_per_segment.max(1),
        })
    }

    /// All sampled points, waypoints included exactly.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let s = self.samples_per_segment;
        let mut out = Vec::with_capacity((self.waypoints.len() - 1) * s + 1);
        for pair in self.waypoints.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            for k in 0..s {
                let t = k as f64 / s as f64;
                out.push(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect());
            }
        }
        out.push(self.waypoints[self.waypoints.len() - 1].clone());
        out
    }
}

/// `n` equally spaced points from `a` to `b`, endpoints included.
pub fn interpolate_path(a: &[f64], b: &[f64], n: usize) -> Result<LatentPath, LatentError> {
    if n < 2 {
        return Err(LatentError::PathTooShort(n));
    }
    LatentPath::new(vec![a.to_vec(), b.to_vec()], n - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPath {
    pub points: Vec<Vec<f64>>,
    /// Decoded frames, one per path point.
    pub frames: Vec<Vec<f64>>,
    pub audio: AudioBuffer,
}

pub fn render_path<T: Scalar>(
    model: &VaeModel<T>,
    path: &LatentPath,
    renderer: &dyn FrameRenderer,
) -> Result<RenderedPath, LatentError> {
    let points = path.points();
    let frames = model.decode_rows(&points)?;
    let audio = renderer.render(&frames).map_err(LatentError::Render)?;
    Ok(RenderedPath { points, frames, audio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Levels along the first PCA axis.
    pub planes: Vec<f64>,
    /// Nodes per side of each plane.
    pub size: usize,
    pub range: (f64, f64),
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            planes: vec![-0.75, -0.45, -0.15, 0.15, 0.45, 0.75],
            size: 50,
            range: (-1.0, 1.0),
        }
    }
}

impl GridConfig {
    pub fn axis_values(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        if self.size < 2 {
            return vec![0.5 * (lo + hi); self.size];
        }
        (0..self.size)
            .map(|i| lo + (hi - lo) * i as f64 / (self.size - 1) as f64)
            .collect()
    }
}

/// Descriptor fields over one plane; `[row][col]` indexes the second and
/// third PCA coordinates. Undefined descriptors are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPlane {
    pub x: f64,
    pub centroid: Vec<Vec<f64>>,
    pub bandwidth: Vec<Vec<f64>>,
}

/// Median absolute difference between 4-neighbours of a field.
pub fn local_smoothness(field: &[Vec<f64>]) -> f64 {
    let mut diffs = Vec::new();
    for (r, row) in field.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if c + 1 < row.len() {
                diffs.push((row[c + 1] - v).abs());
            }
            if let Some(next) = field.get(r + 1) {
                diffs.push((next[c] - v).abs());
            }
        }
    }
    diffs.retain(|d| d.is_finite());
    if diffs.is_empty() {
        return f64::NAN;
    }
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len() / 2;
    if diffs.len() % 2 == 0 {
        0.5 * (diffs[m - 1] + diffs[m])
    } else {
        diffs[m]
    }
}

/// Decode a regular grid on planes of constant first PCA coordinate and
/// evaluate centroid and bandwidth against `freqs`.
pub fn descriptor_grid<T: Scalar>(
    model: &VaeModel<T>,
    pca: &PcaProjection,
    config: &GridConfig,
    freqs: &[f64],
) -> Result<Vec<GridPlane>, LatentError> {
    let axis = config.axis_values();
    let n = axis.len();
    let mut planes = Vec::with_capacity(config.planes.len());
    for &x in &config.planes {
        let latents: Vec<Vec<f64>> = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&z| [x, y, z]))
            .map(|p| pca.lift(&p))
            .collect();
        let decoded = model.decode_rows(&latents)?;
        let mut centroid = vec![vec![f64::NAN; n]; n];
        let mut bandwidth = vec![vec![f64::NAN; n]; n];
        for (k, frame) in decoded.iter().enumerate() {
            let (r, c) = (k / n, k % n);
            centroid[r][c] = spectral_centroid(frame, freqs).unwrap_or(f64::NAN);
            bandwidth[r][c] = spectral_bandwidth(frame, freqs).unwrap_or(f64::NAN);
        }
        planes.push(GridPlane { x, centroid, bandwidth });
    }
    Ok(planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::spectral::{NsgtScale, TransformKind};
    use crate::vae::VaeArchitecture;
    use crate::Tensor;

    struct Concat;

    impl FrameRenderer for Concat {
        fn render(&self, frames: &[Vec<f64>]) -> Result<AudioBuffer, BoxError> {
            Ok(AudioBuffer::new(frames.concat(), 22050.0)?)
        }
    }

    fn model(dx: usize) -> VaeModel<f64> {
        VaeModel::new(VaeArchitecture::new(dx, vec![8], 4).unwrap(), &mut Rng::new(0))
    }

    #[test]
    fn interpolation_is_exact_at_ends_and_uniform() {
        let a = vec![0.0, 1.0, -2.0];
        let b = vec![5.0, -1.0, 0.5];
        let p = interpolate_path(&a, &b, 6).unwrap().points();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], a);
        assert_eq!(p[5], b);
        for k in 1..5 {
            for j in 0..3 {
                assert!((p[k][j] - (a[j] + k as f64 / 5.0 * (b[j] - a[j]))).abs() < 1e-12);
            }
        }
        let steps: Vec<Vec<f64>> = p.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(x, y)| x - y).collect()).collect();
        for s in &steps[1..] {
            assert!(s.iter().zip(&steps[0]).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        assert_eq!(interpolate_path(&a, &b, 2).unwrap().points(), vec![a.clone(), b]);
        let same = interpolate_path(&a, &a, 3).unwrap().points();
        assert_eq!(same[1], a);
        assert!(matches!(interpolate_path(&a, &a, 1), Err(LatentError::PathTooShort(1))));
    }

    #[test]
    fn rendered_endpoints_match_direct_decodes() {
        let m = model(5);
        let a = vec![0.3, -0.1, 0.0, 1.0];
        let b = vec![-1.0, 0.2, 0.5, 0.0];
        let r = render_path(&m, &interpolate_path(&a, &b, 6).unwrap(), &Concat).unwrap();
        let direct = m.decode_rows(&[a, b]).unwrap();
        assert_eq!(r.frames[0], direct[0]);
        assert_eq!(r.frames[5], direct[1]);
        assert_eq!(r.audio.len(), 30);

        let c = vec![0.1; 4];
        let flat = render_path(&m, &LatentPath::new(vec![c.clone(), c], 4).unwrap(), &Concat).unwrap();
        for w in flat.frames.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn out_of_domain_checks_transform() {
        let spec = TransformSpec::nsgt(NsgtScale::Mel { bins: 400 });
        let m = VaeModel::<f32>::new(
            VaeArchitecture::new(spec.frame_len(), vec![8], 3).unwrap(),
            &mut Rng::new(1),
        );
        let f = SpectralFrame::new(vec![0.2; spec.frame_len()], spec.clone(), None, "a").unwrap();
        let enc = encode_out_of_domain(&m, &spec, &[f.clone(), f.clone()]).unwrap();
        assert_eq!(enc.points[0], enc.points[1]);
        assert_eq!(enc.centroid, enc.points[0]);
        assert!(matches!(encode_out_of_domain(&m, &spec, &[]), Err(LatentError::EmptySplit)));

        let mut other = spec.clone();
        other.kind = TransformKind::Stft;
        assert!(matches!(encode_out_of_domain(&m, &other, &[f]), Err(LatentError::PlanMismatch { .. })));
    }

    #[test]
    fn small_grid_is_finite() {
        let m = model(6);
        let mut rng = Rng::new(4);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let pca = fit_pca(&pts).unwrap();
        let freqs: Vec<f64> = (0..6).map(|k| 100.0 * (k + 1) as f64).collect();
        let cfg = GridConfig {
            size: 2,
            ..GridConfig::default()
        };
        let planes = descriptor_grid(&m, &pca, &cfg, &freqs).unwrap();
        assert_eq!(planes.len(), 6);
        for p in &planes {
            assert_eq!(p.centroid.concat().len(), 4);
            assert!(p.centroid.concat().iter().chain(p.bandwidth.concat().iter()).all(|v| v.is_finite()));
            assert!(local_smoothness(&p.centroid).is_finite());
        }
        let corners = [[0.0, 1.0, 1.0], [0.0, -1.0, -1.0]];
        for c in corners {
            let z = Tensor::matrix(1, 4, pca.lift(&c)).unwrap();
            assert!(m.decode(&z).unwrap().is_finite());
        }
        assert_eq!(GridConfig::default().axis_values().len(), 50);
    }
}
