use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::linalg::{canonicalize_largest, dot, symmetric_eigen};

pub const PCA_DIMS: usize = 3;

/// Three principal axes of a set of latent points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `basis[k]` is the k-th axis, unit length, in decreasing variance order.
    pub basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaProjection {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Share of the total variance carried by the three axes.
    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.iter().sum::<f64>() / self.total_variance
        } else {
            0.0
        }
    }

    pub fn project(&self, z: &[f64]) -> [f64; PCA_DIMS] {
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut out = [0.0; PCA_DIMS];
        for (o, axis) in out.iter_mut().zip(&self.basis) {
            *o = dot(&centered, axis);
        }
        out
    }

    /// `mean + Σ_k xyz_k · axis_k`; the remaining latent directions stay at the mean.
    pub fn lift(&self, xyz: &[f64; PCA_DIMS]) -> Vec<f64> {
        let mut z = self.mean.clone();
        for (c, axis) in xyz.iter().zip(&self.basis) {
            z.iter_mut().zip(axis).for_each(|(v, a)| *v += c * a);
        }
        z
    }

    /// Move `z` by `delta` expressed in PCA coordinates.
    pub fn offset(&self, z: &[f64], delta: &[f64; PCA_DIMS]) -> Vec<f64> {
        let mut out = z.to_vec();
        for (c, axis) in delta.iter().zip(&self.basis) {
            out.iter_mut().zip(axis).for_each(|(v, a)| *v += c * a);
        }
        out
    }
}

/// Principal axes of the covariance of `latents`.
///
/// Each axis is flipped so its largest-magnitude loading is positive. When
/// the data has rank below three, the trailing axes come from the remaining
/// eigenvectors, which still complete an orthonormal set.
pub fn fit_pca(latents: &[Vec<f64>]) -> Result<PcaProjection, LatentError> {
    if latents.len() < 4 {
        return Err(LatentError::TooFewPoints(latents.len()));
    }
    let d = latents[0].len();
    if d < PCA_DIMS {
        return Err(LatentError::Dimension { expected: PCA_DIMS, got: d });
    }
    if let Some(bad) = latents.iter().find(|z| z.len() != d) {
        return Err(LatentError::Dimension { expected: d, got: bad.len() });
    }
    let n = latents.len() as f64;
    let mut mean = vec![0.0; d];
    for z in latents {
        mean.iter_mut().zip(z).for_each(|(m, v)| *m += v / n);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for z in latents {
        let c: Vec<f64> = z.iter().zip(&mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i][i]).sum();
    let eig = symmetric_eigen(&cov)?;
    let tol = 1e-12 * total_variance.max(f64::MIN_POSITIVE);
    let rank = eig.values.iter().filter(|&&v| v > tol).count();
    if rank < PCA_DIMS {
        log::warn!("latent data has rank {rank}; padding PCA basis with an orthonormal completion");
    }
    let mut basis = Vec::with_capacity(PCA_DIMS);
    let mut explained_variance = Vec::with_capacity(PCA_DIMS);
    for k in 0..PCA_DIMS {
        let mut axis = eig.vectors[k].clone();
        canonicalize_largest(&mut axis);
        basis.push(axis);
        explained_variance.push(eig.values[k].max(0.0));
    }
    Ok(PcaProjection {
        mean,
        basis,
        explained_variance,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn recovers_axis_aligned_subspace() {
        let mut rng = Rng::new(1);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let mut z = vec![0.0; 64];
                z[5] = 3.0 * rng.normal();
                z[17] = 2.0 * rng.normal();
                z[40] = rng.normal();
                z
            })
            .collect();
        let p = fit_pca(&pts).unwrap();
        assert!((p.explained_ratio() - 1.0).abs() < 1e-12);
        // the basis spans exactly the three populated coordinates
        for axis in &p.basis {
            let inside: f64 = [5, 17, 40].iter().map(|&k| axis[k] * axis[k]).sum();
            assert!((inside - 1.0).abs() < 1e-9);
            let largest = axis.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(largest > 0.0);
        }
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&p.basis[i], &p.basis[j]) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn isotropic_cloud_has_even_variances() {
        let mut rng = Rng::new(2);
        let pts: Vec<Vec<f64>> = (0..10_000).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let p = fit_pca(&pts).unwrap();
        let v = &p.explained_variance;
        let spread = (v[0] - v[2]) / v[0];
        assert!(spread < 0.1, "{v:?}");
    }

    #[test]
    fn project_and_lift_are_inverse_on_the_subspace() {
        let mut rng = Rng::new(3);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|_| rng.normal()).collect()).collect();
        let p = fit_pca(&pts).unwrap();
        let v = [0.1, 0.2, 0.3];
        let back = p.project(&p.lift(&v));
        for k in 0..3 {
            assert!((back[k] - v[k]).abs() < 1e-9);
        }
        assert!(p.project(&p.mean).iter().all(|c| c.abs() < 1e-12));

        let z = &pts[7];
        let once = p.lift(&p.project(z));
        let twice = p.lift(&p.project(&once));
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-9));

        // distances between points in the principal subspace are preserved
        let a = p.lift(&[0.5, -0.2, 0.1]);
        let b = p.lift(&[-0.3, 0.4, 0.0]);
        let (pa, pb) = (p.project(&a), p.project(&b));
        let d_latent: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let d_pca: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((d_latent - d_pca).abs() < 1e-9);
    }

    #[test]
    fn low_rank_is_padded() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0, 0.0, 0.0]).collect();
        let p = fit_pca(&pts).unwrap();
        assert_eq!(p.basis.len(), 3);
        for i in 0..3 {
            assert!((dot(&p.basis[i], &p.basis[i]) - 1.0).abs() < 1e-9);
        }
        assert!(matches!(fit_pca(&pts[..3]), Err(LatentError::TooFewPoints(3))));
    }
}
