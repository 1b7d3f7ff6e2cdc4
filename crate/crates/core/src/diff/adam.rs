use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::{DiffError, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    /// Number of applied updates.
    pub step_count: u64,
    /// Number of updates refused because of non-finite gradients.
    pub skipped: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'p>(config: AdamConfig, params: impl IntoIterator<Item = &'p Tensor<T>>) -> Self {
        let first_moment: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second_moment = first_moment.clone();
        Self {
            config,
            first_moment,
            second_moment,
            step_count: 0,
            skipped: 0,
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient anywhere
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<(), DiffError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(DiffError::ShapeError {
                op: "adam_step",
                lhs: alloc::vec![self.first_moment.len()],
                rhs: alloc::vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(DiffError::ShapeError {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("non-finite gradient, skipping Adam step ({} skipped)", self.skipped);
            return Err(DiffError::NonFiniteGradient { skipped: self.skipped });
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - Float::powi(c.beta1, t);
        let bias2 = 1.0 - Float::powi(c.beta2, t);
        let step_size = T::from_f64_lossy(c.learning_rate / bias1);
        let inv_sqrt_bias2 = T::from_f64_lossy(1.0 / Float::sqrt(bias2));
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let eps = T::from_f64_lossy(c.epsilon);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                // lr·m̂/(√v̂ + ε) with m̂ = m/bias1, v̂ = v/bias2
                *pi = *pi - step_size * *mi / (vi.sqrt() * inv_sqrt_bias2 + eps);
            }
        }
        Ok(())
    }
}
