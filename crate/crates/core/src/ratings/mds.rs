use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{DissimilarityMatrix, RatingsError};
use crate::linalg::{canonicalize_first_nonzero, sq_dist, symmetric_eigen};

/// Target timbre space: one coordinate row per instrument, centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimbreTarget {
    pub instruments: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    /// Full spectrum of the double-centered matrix, decreasing.
    pub eigenvalues: Vec<f64>,
    pub source_matrix: DissimilarityMatrix,
}

impl TimbreTarget {
    pub fn dims(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.instruments.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsResult {
    pub target: TimbreTarget,
    /// Set when fewer than the requested number of positive eigenvalues exist.
    pub reduced_from: Option<usize>,
}

/// Classical (Torgerson) scaling of a dissimilarity matrix into `dims` axes.
///
/// `B = -½ J D² J` is eigendecomposed; each kept axis is an eigenvector
/// scaled by the square root of its eigenvalue, with its first non-zero
/// loading made positive.
pub fn mds(matrix: &DissimilarityMatrix, dims: usize) -> Result<MdsResult, RatingsError> {
    let n = matrix.len();
    if dims == 0 || n < 2 || dims > n - 1 {
        return Err(RatingsError::BadDimension { dims, count: n });
    }
    let d2: Vec<Vec<f64>> = matrix
        .values
        .iter()
        .map(|r| r.iter().map(|v| v * v).collect())
        .collect();
    let row_mean: Vec<f64> = d2.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| -0.5 * (d2[i][j] - row_mean[i] - row_mean[j] + grand))
                .collect()
        })
        .collect();

    let eig = symmetric_eigen(&b)?;
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-10 * top.max(1e-300);
    let positive = eig.values.iter().take(dims).take_while(|&&v| v > tol).count();
    let reduced_from = (positive < dims).then_some(dims);
    if reduced_from.is_some() {
        log::warn!("only {positive} positive eigenvalues, reducing MDS from {dims} dimensions");
    }
    let kept = positive.max(1);

    let mut coords = vec![vec![0.0; kept]; n];
    for k in 0..positive {
        let mut axis = eig.vectors[k].clone();
        canonicalize_first_nonzero(&mut axis, 1e-9);
        let s = Float::sqrt(eig.values[k]);
        for i in 0..n {
            coords[i][k] = axis[i] * s;
        }
    }
    center(&mut coords);
    Ok(MdsResult {
        target: TimbreTarget {
            instruments: matrix.instruments.clone(),
            coords,
            eigenvalues: eig.values,
            source_matrix: matrix.clone(),
        },
        reduced_from,
    })
}

fn center(coords: &mut [Vec<f64>]) {
    let n = coords.len();
    if n == 0 {
        return;
    }
    for k in 0..coords[0].len() {
        let m = coords.iter().map(|c| c[k]).sum::<f64>() / n as f64;
        coords.iter_mut().for_each(|c| c[k] -= m);
    }
}

/// Raw stress `Σ_{i<j} (d_ij(X) − δ_ij)²`.
pub fn stress(coords: &[Vec<f64>], matrix: &DissimilarityMatrix) -> f64 {
    let n = coords.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = Float::sqrt(sq_dist(&coords[i], &coords[j]));
            s += (d - matrix.values[i][j]).powi(2);
        }
    }
    s
}

/// Optional SMACOF refinement (unit weights) starting from a classical solution.
/// Returns the final stress.
pub fn smacof_refine(target: &mut TimbreTarget, iterations: usize, tol: f64) -> f64 {
    let n = target.coords.len();
    let dims = target.dims();
    let delta = &target.source_matrix.values;
    let mut x = target.coords.clone();
    let mut prev = stress(&x, &target.source_matrix);
    for _ in 0..iterations {
        let mut next = vec![vec![0.0; dims]; n];
        for i in 0..n {
            let mut bii = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = Float::sqrt(sq_dist(&x[i], &x[j]));
                let bij = if d > 1e-12 { -delta[i][j] / d } else { 0.0 };
                bii -= bij;
                for k in 0..dims {
                    next[i][k] += bij * x[j][k];
                }
            }
            for k in 0..dims {
                next[i][k] += bii * x[i][k];
                next[i][k] /= n as f64;
            }
        }
        let s = stress(&next, &target.source_matrix);
        x = next;
        if prev - s < tol {
            prev = s;
            break;
        }
        prev = s;
    }
    center(&mut x);
    target.coords = x;
    prev
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use crate::rng::Rng;

    fn matrix(values: Vec<Vec<f64>>) -> DissimilarityMatrix {
        let names = (0..values.len()).map(|i| format!("i{i}")).collect();
        DissimilarityMatrix { instruments: names, values }
    }

    #[test]
    fn equilateral_triangle() {
        let m = matrix(vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let r = mds(&m, 2).unwrap();
        let c = &r.target.coords;
        let d01 = sq_dist(&c[0], &c[1]).sqrt();
        let d02 = sq_dist(&c[0], &c[2]).sqrt();
        let d12 = sq_dist(&c[1], &c[2]).sqrt();
        assert!((d01 - 1.0).abs() < 1e-9 && (d02 - 1.0).abs() < 1e-9 && (d12 - 1.0).abs() < 1e-9);
        assert!(r.reduced_from.is_none());
    }

    #[test]
    fn two_points_sit_at_half_distance() {
        let delta = 0.8;
        let m = matrix(vec![vec![0.0, delta], vec![delta, 0.0]]);
        let r = mds(&m, 1).unwrap();
        // first non-zero loading positive ⇒ point 0 at +δ/2
        assert!((r.target.coords[0][0] - delta / 2.0).abs() < 1e-12);
        assert!((r.target.coords[1][0] + delta / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero_coords() {
        let m = matrix(vec![vec![0.0; 4]; 4]);
        let r = mds(&m, 3).unwrap();
        assert_eq!(r.reduced_from, Some(3));
        assert!(r.target.coords.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_bounds() {
        let m = matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(mds(&m, 2), Err(RatingsError::BadDimension { .. })));
        assert!(matches!(mds(&m, 0), Err(RatingsError::BadDimension { .. })));
    }

    #[test]
    fn smacof_does_not_increase_stress() {
        let mut rng = Rng::new(5);
        let n = 8;
        let mut v = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let x = rng.uniform_range(0.2, 1.0);
                v[i][j] = x;
                v[j][i] = x;
            }
        }
        let m = matrix(v);
        let mut t = mds(&m, 2).unwrap().target;
        let before = stress(&t.coords, &m);
        let after = smacof_refine(&mut t, 200, 1e-12);
        assert!(after <= before + 1e-12, "{after} > {before}");
    }
}
