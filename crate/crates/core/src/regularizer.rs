//! Distance-KL penalty between latent class positions and a target space.
//!
//! Latent neighbours follow a Gaussian kernel with fixed `σ = 1/√2`
//! normalized per row; target neighbours follow a Student-t kernel
//! normalized over all ordered pairs. The penalty is the sum over anchors of
//! `KL(D^z_i ‖ D^T_i)`. Only the latent side carries gradients.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Scalar, Tape, Tensor, Var};
use crate::linalg::sq_dist;

/// Floor added inside every logarithm.
pub const EPSILON_FLOOR: f64 = 1e-12;
/// `2σ²` for the latent Gaussian kernel with `σ = 1/√2`.
const TWO_SIGMA_SQ: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("latent and target sides disagree: {0} vs {1} points")]
    Mismatch(usize, usize),
    #[error("class {0} has no samples in the batch")]
    EmptyClass(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// How target-space affinities are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TargetNormalization {
    /// Divide by the sum over all ordered pairs `k ≠ l`.
    #[default]
    Global,
    /// Divide each row by its own sum (ablation).
    RowWise,
}

/// Per-anchor affinity rows with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceDistribution {
    pub rows: Vec<Vec<f64>>,
}

impl DistanceDistribution {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.rows.iter().flatten().sum()
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<(), RegError> {
    if points.len() < 2 {
        return Err(RegError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    Ok(())
}

/// Conditional Gaussian neighbour probabilities in latent space.
/// Coincident points give uniform rows.
pub fn latent_neighbor_dist(z: &[Vec<f64>]) -> Result<DistanceDistribution, RegError> {
    check_points(z)?;
    let n = z.len();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        let logits: Vec<f64> = (0..n)
            .map(|j| if i == j { f64::NEG_INFINITY } else { -sq_dist(&z[i], &z[j]) / TWO_SIGMA_SQ })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            row[j] = Float::exp(logits[j] - max);
            sum += row[j];
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(DistanceDistribution { rows })
}

/// Student-t affinities in the target space.
pub fn target_neighbor_dist(
    t: &[Vec<f64>],
    norm: TargetNormalization,
) -> Result<DistanceDistribution, RegError> {
    check_points(t)?;
    let n = t.len();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                rows[i][j] = 1.0 / (1.0 + sq_dist(&t[i], &t[j]));
            }
        }
    }
    match norm {
        TargetNormalization::Global => {
            let total: f64 = rows.iter().flatten().sum();
            rows.iter_mut().flatten().for_each(|v| *v /= total);
        }
        TargetNormalization::RowWise => {
            for row in rows.iter_mut() {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    Ok(DistanceDistribution { rows })
}

/// `Σ_i Σ_{j≠i} D^z_ij · log(D^z_ij / D^T_ij)` with the epsilon floor.
pub fn kl_sum(dz: &DistanceDistribution, dt: &DistanceDistribution) -> Result<f64, RegError> {
    if dz.len() != dt.len() {
        return Err(RegError::Mismatch(dz.len(), dt.len()));
    }
    let mut r = 0.0;
    for (i, (pz, pt)) in dz.rows.iter().zip(&dt.rows).enumerate() {
        for j in (0..pz.len()).filter(|&j| j != i) {
            let p = pz[j];
            r += p * (Float::ln(p + EPSILON_FLOOR) - Float::ln(pt[j] + EPSILON_FLOOR));
        }
    }
    Ok(r)
}

/// The penalty `R(z, T)` evaluated on plain coordinates.
pub fn reg_loss(z: &[Vec<f64>], t: &[Vec<f64>], norm: TargetNormalization) -> Result<f64, RegError> {
    if z.len() != t.len() {
        return Err(RegError::Mismatch(z.len(), t.len()));
    }
    kl_sum(&latent_neighbor_dist(z)?, &target_neighbor_dist(t, norm)?)
}

/// Class representatives of one batch: the mean posterior mean per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBatch {
    /// Target-space class ids, ascending.
    pub class_ids: Vec<usize>,
    /// Row `k` averages the batch rows of `class_ids[k]`.
    pub weights: Vec<Vec<f64>>,
}

impl ClassBatch {
    /// Group batch rows by label; unlabeled rows are ignored.
    pub fn from_labels(labels: &[Option<usize>]) -> Self {
        let mut class_ids: Vec<usize> = labels.iter().flatten().copied().collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        let weights = class_ids
            .iter()
            .map(|&c| {
                let count = labels.iter().filter(|l| **l == Some(c)).count() as f64;
                labels
                    .iter()
                    .map(|l| if *l == Some(c) { 1.0 / count } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { class_ids, weights }
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Apply the averaging to plain latent rows.
    pub fn representatives(&self, latents: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = latents.first().map_or(0, Vec::len);
        self.weights
            .iter()
            .map(|w| {
                let mut out = vec![0.0; d];
                for (wi, z) in w.iter().zip(latents) {
                    if *wi != 0.0 {
                        out.iter_mut().zip(z).for_each(|(o, v)| *o += wi * v);
                    }
                }
                out
            })
            .collect()
    }
}

/// Per-class mean of `latents` for the classes present in `labels`.
pub fn class_representatives(latents: &[Vec<f64>], labels: &[Option<usize>]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let batch = ClassBatch::from_labels(labels);
    let reps = batch.representatives(latents);
    (batch.class_ids, reps)
}

/// Record `R` on a tape from a batch of posterior means `mu` (B×d).
///
/// Returns `None` when fewer than three classes are present; the caller
/// skips the penalty for that step.
pub fn reg_loss_on_tape<T: Scalar>(
    tape: &mut Tape<'_, T>,
    mu: Var,
    labels: &[Option<usize>],
    target_coords: &[Vec<f64>],
    norm: TargetNormalization,
) -> Result<Option<Var>, RegError> {
    let batch = ClassBatch::from_labels(labels);
    if batch.len() < 3 {
        return Ok(None);
    }
    let rows = tape.value(mu).rows();
    if rows != labels.len() {
        return Err(RegError::Mismatch(rows, labels.len()));
    }
    let c = batch.len();
    let avg: Vec<T> = batch
        .weights
        .iter()
        .flatten()
        .map(|&w| T::from_f64_lossy(w))
        .collect();
    let avg = tape.constant(Tensor::matrix(c, rows, avg).map_err(RegError::Diff)?);
    let z = tape.matmul(avg, mu)?;

    let t: Vec<Vec<f64>> = batch.class_ids.iter().map(|&k| target_coords[k].clone()).collect();
    let dt = target_neighbor_dist(&t, norm)?;
    let log_t: Vec<T> = (0..c)
        .flat_map(|i| {
            let row = &dt.rows[i];
            (0..c).map(move |j| {
                if i == j {
                    T::zero()
                } else {
                    T::from_f64_lossy(Float::ln(row[j] + EPSILON_FLOOR))
                }
            })
        })
        .collect();
    let log_t = tape.constant(Tensor::matrix(c, c, log_t)?);

    let d2 = tape.pairwise_sq_dist(z)?;
    let logits = tape.scale(d2, T::from_f64_lossy(-1.0 / TWO_SIGMA_SQ));
    let p = tape.row_softmax(logits, true)?;
    let p_floor = tape.add_scalar(p, T::from_f64_lossy(EPSILON_FLOOR));
    let log_p = tape.log(p_floor);
    let ratio = tape.sub(log_p, log_t)?;
    let terms = tape.mul(p, ratio)?;
    Ok(Some(tape.sum(terms)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn two_point_latent_rows_are_one() {
        let d = latent_neighbor_dist(&pts(&[&[0.0, 0.0], &[3.0, 1.0]])).unwrap();
        assert_eq!(d.rows, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn equidistant_triplet_rows_are_half() {
        let h = 3f64.sqrt() / 2.0;
        let d = latent_neighbor_dist(&pts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]])).unwrap();
        for (i, row) in d.rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collinear_latent_hand_values() {
        let d = latent_neighbor_dist(&pts(&[&[0.0], &[1.0], &[3.0]])).unwrap();
        let (a, b) = ((-1.0f64).exp(), (-9.0f64).exp());
        assert!((d.rows[0][1] - a / (a + b)).abs() < 1e-12);
        assert!((d.rows[0][2] - b / (a + b)).abs() < 1e-12);
        assert!((d.rows[0][1] - 0.999_664_649).abs() < 1e-8);
    }

    #[test]
    fn coincident_points_are_uniform() {
        let d = latent_neighbor_dist(&pts(&[&[1.0], &[1.0], &[1.0], &[1.0]])).unwrap();
        for (i, row) in d.rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((v - if i == j { 0.0 } else { 1.0 / 3.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn target_global_normalization() {
        let d = target_neighbor_dist(&pts(&[&[0.0], &[2.0]]), TargetNormalization::Global).unwrap();
        assert_eq!(d.rows, vec![vec![0.0, 0.5], vec![0.5, 0.0]]);

        let h = 3f64.sqrt() / 2.0;
        let e = target_neighbor_dist(&pts(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]]), TargetNormalization::Global)
            .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((e.rows[i][j] - 1.0 / 6.0).abs() < 1e-12);
                }
            }
        }

        // collinear 0, 1, 3: pair kernels 1/2, 1/10, 1/5, each pair counted twice
        let c = target_neighbor_dist(&pts(&[&[0.0], &[1.0], &[3.0]]), TargetNormalization::Global).unwrap();
        let z = 2.0 * (0.5 + 0.1 + 0.2);
        assert!((c.rows[0][1] - 0.5 / z).abs() < 1e-15);
        assert!((c.rows[0][2] - 0.1 / z).abs() < 1e-15);
        assert!((c.rows[1][2] - 0.2 / z).abs() < 1e-15);
        assert!((c.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_penalty_exposes_normalization_gap() {
        let r = reg_loss(
            &pts(&[&[0.0], &[5.0]]),
            &pts(&[&[0.0], &[1.0]]),
            TargetNormalization::Global,
        )
        .unwrap();
        assert!((r - 2.0 * 2f64.ln()).abs() < 1e-9);
        let rw = reg_loss(
            &pts(&[&[0.0], &[5.0]]),
            &pts(&[&[0.0], &[1.0]]),
            TargetNormalization::RowWise,
        )
        .unwrap();
        assert!(rw.abs() < 1e-9);
    }

    #[test]
    fn representatives_are_class_means() {
        let latents = pts(&[&[0.0, 0.0], &[5.0, 5.0], &[2.0, 2.0]]);
        let (ids, reps) = class_representatives(&latents, &[Some(3), Some(1), Some(3)]);
        assert_eq!(ids, vec![1, 3]);
        assert_eq!(reps, vec![vec![5.0, 5.0], vec![1.0, 1.0]]);
        // permuting the batch leaves the representatives unchanged
        let (ids2, reps2) = class_representatives(&pts(&[&[2.0, 2.0], &[0.0, 0.0], &[5.0, 5.0]]), &[Some(3), Some(3), Some(1)]);
        assert_eq!(ids, ids2);
        assert_eq!(reps, reps2);
    }

    #[test]
    fn tape_matches_plain_evaluation() {
        let mut rng = Rng::new(3);
        let labels: Vec<Option<usize>> = (0..10).map(|i| Some(i % 4)).collect();
        let latents: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let target: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();

        let mut tape = Tape::<f64>::new();
        let mu = tape.param(Tensor::from_rows(&latents).unwrap());
        let r = reg_loss_on_tape(&mut tape, mu, &labels, &target, TargetNormalization::Global)
            .unwrap()
            .unwrap();
        let (_, reps) = class_representatives(&latents, &labels);
        let plain = reg_loss(&reps, &target, TargetNormalization::Global).unwrap();
        assert!((tape.value(r).item() - plain).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_three_classes_skip() {
        let mut tape = Tape::<f64>::new();
        let mu = tape.param(Tensor::zeros(&[4, 2]));
        let out = reg_loss_on_tape(&mut tape, mu, &[Some(0), Some(1), Some(0), None], &[vec![0.0], vec![1.0]], TargetNormalization::Global)
            .unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let labels: Vec<Option<usize>> = (0..7).map(|i| Some(i % 3)).collect();
        let latents: Vec<Vec<f64>> = (0..7).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();
        let target: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();
        let eval = |l: &[Vec<f64>]| {
            let (_, reps) = class_representatives(l, &labels);
            reg_loss(&reps, &target, TargetNormalization::Global).unwrap()
        };

        let mut tape = Tape::<f64>::new();
        let mu = tape.param(Tensor::from_rows(&latents).unwrap());
        let r = reg_loss_on_tape(&mut tape, mu, &labels, &target, TargetNormalization::Global)
            .unwrap()
            .unwrap();
        let grads = tape.backward(r).unwrap();
        let g = grads.get(mu).unwrap();
        let h = 1e-6;
        for i in 0..7 {
            for k in 0..2 {
                let mut up = latents.clone();
                up[i][k] += h;
                let mut dn = latents.clone();
                dn[i][k] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                assert!((fd - g.get(i, k)).abs() < 1e-6, "({i},{k}) fd {fd} vs {}", g.get(i, k));
            }
        }
    }
}
