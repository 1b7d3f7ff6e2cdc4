use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{tensor_to_rows, Dataset, VaeError, VaeModel};
use crate::diff::{Scalar, Tensor};
use crate::regularizer::{class_representatives, reg_loss, TargetNormalization};
use crate::rng::Rng;

const CHUNK_ROWS: usize = 256;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean importance-sampled `log p(x)` per frame, in nats.
    pub log_likelihood: f64,
    /// Mean `‖x − x̃‖²` with `x̃` decoded from the posterior mean.
    pub mean_sq_err: f64,
    pub frames: usize,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + Float::ln(v.iter().map(|x| Float::exp(x - m)).sum::<f64>())
}

/// Test-set log-likelihood with `k` importance samples from the posterior,
/// and the reconstruction error of the posterior mean.
pub fn evaluate<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>, k: usize, rng: &mut Rng) -> Result<Evaluation, VaeError> {
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(VaeError::EmptySplit);
    }
    let k = k.max(1);
    let d_x = model.arch().input_dim;
    let d_z = model.arch().latent_dim;
    let (mut ll_sum, mut se_sum) = (0.0, 0.0);
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(CHUNK_ROWS) {
        let xc = x.select_rows(chunk);
        let xr = tensor_to_rows(&xc);
        let (mu, lv) = model.encode(&xc)?;
        let recon = tensor_to_rows(&model.decode(&mu)?);
        se_sum += mean_sq_err(&xr, &recon) * xr.len() as f64;

        let (mu, lv) = (tensor_to_rows(&mu), tensor_to_rows(&lv));
        let mut log_w = vec_of_vecs(chunk.len(), k);
        for s in 0..k {
            let mut z = Vec::with_capacity(chunk.len() * d_z);
            let mut log_ratio = Vec::with_capacity(chunk.len());
            for (m, l) in mu.iter().zip(&lv) {
                let mut lr = 0.0;
                for j in 0..d_z {
                    let e = rng.normal();
                    let zj = m[j] + Float::exp(0.5 * l[j]) * e;
                    // log p(z) − log q(z|x); the 2π terms cancel
                    lr += -0.5 * zj * zj + 0.5 * e * e + 0.5 * l[j];
                    z.push(T::from_f64_lossy(zj));
                }
                log_ratio.push(lr);
            }
            let z = Tensor::matrix(chunk.len(), d_z, z)?;
            let xh = tensor_to_rows(&model.decode(&z)?);
            for (i, (a, b)) in xr.iter().zip(&xh).enumerate() {
                let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
                log_w[i][s] = -0.5 * sq - 0.5 * d_x as f64 * LN_2PI + log_ratio[i];
            }
        }
        ll_sum += log_w.iter().map(|w| log_sum_exp(w) - Float::ln(k as f64)).sum::<f64>();
    }
    let n = x.rows() as f64;
    Ok(Evaluation {
        log_likelihood: ll_sum / n,
        mean_sq_err: se_sum / n,
        frames: x.rows(),
    })
}

/// Mean over rows of the squared Euclidean distance between paired rows.
pub fn mean_sq_err(x: &[Vec<f64>], x_hat: &[Vec<f64>]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter()
        .zip(x_hat)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum::<f64>()
        / x.len() as f64
}

fn vec_of_vecs(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| alloc::vec![0.0; cols]).collect()
}

/// Posterior means of every row of `x`.
pub fn posterior_means<T: Scalar>(model: &VaeModel<T>, x: &Tensor<T>) -> Result<Vec<Vec<f64>>, VaeError> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut out = Vec::with_capacity(x.rows());
    for chunk in rows.chunks(CHUNK_ROWS) {
        let (mu, _) = model.encode(&x.select_rows(chunk))?;
        out.extend(tensor_to_rows(&mu));
    }
    Ok(out)
}

/// Distance-KL between class centroids of the posterior means over a whole
/// dataset and the target space. `None` with fewer than three classes.
pub fn latent_distance_kl(
    model: &VaeModel<f32>,
    data: &Dataset,
    target: &[Vec<f64>],
    norm: TargetNormalization,
) -> Result<Option<f64>, VaeError> {
    let mu = posterior_means(model, &data.x)?;
    let (ids, reps) = class_representatives(&mu, &data.labels);
    if ids.len() < 3 {
        return Ok(None);
    }
    let t: Vec<Vec<f64>> = ids.iter().map(|&c| target[c].clone()).collect();
    Ok(Some(reg_loss(&reps, &t, norm)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_baselines() {
        let x = alloc::vec![alloc::vec![1.0, 2.0], alloc::vec![0.0, 3.0]];
        assert_eq!(mean_sq_err(&x, &x), 0.0);
        let zeros = alloc::vec![alloc::vec![0.0; 2]; 2];
        assert_eq!(mean_sq_err(&x, &zeros), (5.0 + 9.0) / 2.0);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
