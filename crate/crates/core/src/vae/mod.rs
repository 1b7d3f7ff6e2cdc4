//! β-VAE over magnitude frames: mean-field Gaussian encoder, softplus
//! decoder, ELBO with warm-up, the two-stage trainer and evaluation.

mod eval;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Scalar, Tape, Tensor, Var};
use crate::regularizer::{reg_loss_on_tape, RegError, TargetNormalization};
use crate::rng::Rng;

pub use eval::{evaluate, latent_distance_kl, mean_sq_err, posterior_means, Evaluation};
pub use train::{
    warmup_beta, Dataset, EpochMetrics, NoObserver, TrainConfig, TrainObserver, Trainer,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VaeError {
    #[error("input has {got} columns, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameters hold the last good state")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("class {0:?} is not in the target space")]
    UnknownClass(String),
    #[error("empty split")]
    EmptySplit,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter {index} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Reg(#[from] RegError),
}

/// Layer widths. The decoder mirrors the encoder's hidden stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl VaeArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, latent_dim: usize) -> Result<Self, VaeError> {
        if input_dim == 0 || latent_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(VaeError::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            latent_dim,
        })
    }

    /// Three ReLU layers of 2000 units and a 64-d latent space.
    pub fn full_size(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![2000; 3],
            latent_dim: 64,
        }
    }

    /// `(fan_in, fan_out)` of every linear layer in parameter order:
    /// encoder stack, μ head, log σ² head, decoder stack, output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.latent_dim));
        dims.push((prev, self.latent_dim));
        prev = self.latent_dim;
        for &h in self.hidden.iter().rev() {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.input_dim));
        dims
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [vec![i, o], vec![o]])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn mu_layer(&self) -> usize {
        self.hidden.len()
    }

    fn decoder_start(&self) -> usize {
        self.hidden.len() + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T: Scalar = f32> {
    arch: VaeArchitecture,
    params: Vec<Tensor<T>>,
}

/// Parameter leaves of one model recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn layer(&self, i: usize) -> (Var, Var) {
        (self.vars[2 * i], self.vars[2 * i + 1])
    }
}

impl<T: Scalar> VaeModel<T> {
    /// Uniform fan-in initialization: `±sqrt(6/fan_in)` for layers feeding a
    /// ReLU, `±sqrt(3/fan_in)` for the heads and output layer. Biases are 0.
    pub fn new(arch: VaeArchitecture, rng: &mut Rng) -> Self {
        let n_layers = arch.layer_dims().len();
        let mu = arch.mu_layer();
        let params = arch
            .layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(l, (fan_in, fan_out))| {
                let relu_follows = l < mu || (l >= mu + 2 && l + 1 < n_layers);
                let gain = if relu_follows { 6.0 } else { 3.0 };
                let bound = Float::sqrt(gain / fan_in as f64);
                let w: Vec<T> = (0..fan_in * fan_out)
                    .map(|_| T::from_f64_lossy(rng.uniform_range(-bound, bound)))
                    .collect();
                [
                    Tensor::new(vec![fan_in, fan_out], w).expect("shape matches data"),
                    Tensor::zeros(&[fan_out]),
                ]
            })
            .collect();
        Self { arch, params }
    }

    pub fn from_params(arch: VaeArchitecture, params: Vec<Tensor<T>>) -> Result<Self, VaeError> {
        let shapes = arch.param_shapes();
        if shapes.len() != params.len() {
            return Err(VaeError::InvalidConfig(alloc::format!(
                "{} parameter tensors, architecture needs {}",
                params.len(),
                shapes.len()
            )));
        }
        for (index, (want, p)) in shapes.into_iter().zip(&params).enumerate() {
            if p.shape() != want.as_slice() {
                return Err(VaeError::ParamShape {
                    index,
                    expected: want,
                    got: p.shape().to_vec(),
                });
            }
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &VaeArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Set the decoder output bias so that an all-zero hidden state decodes
    /// to `mean` (clamped to `floor`), and scale the output weights by
    /// `weight_scale`.
    pub fn init_output(&mut self, mean: &[f64], floor: f64, weight_scale: f64) -> Result<(), VaeError> {
        if mean.len() != self.arch.input_dim {
            return Err(VaeError::InvalidConfig(alloc::format!(
                "output mean has {} entries, model outputs {}",
                mean.len(),
                self.arch.input_dim
            )));
        }
        let n = self.params.len();
        for w in self.params[n - 2].data_mut() {
            *w = T::from_f64_lossy(w.to_f64_lossy() * weight_scale);
        }
        for (b, &m) in self.params[n - 1].data_mut().iter_mut().zip(mean) {
            let y = m.max(floor);
            *b = T::from_f64_lossy(Float::ln(Float::exp_m1(y)));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Record every parameter on `tape`, trainable or detached.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: bool) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.param_ref(p) } else { tape.constant_ref(p) })
            .collect();
        BoundModel { vars }
    }

    pub fn encode_graph(
        &self,
        tape: &mut Tape<'_, T>,
        bound: &BoundModel,
        x: Var,
    ) -> Result<(Var, Var), VaeError> {
        let mut h = x;
        for l in 0..self.arch.hidden.len() {
            let (w, b) = bound.layer(l);
            let a = tape.linear(h, w, b)?;
            h = tape.relu(a);
        }
        let (wm, bm) = bound.layer(self.arch.mu_layer());
        let (wv, bv) = bound.layer(self.arch.mu_layer() + 1);
        let mu = tape.linear(h, wm, bm)?;
        let log_var = tape.linear(h, wv, bv)?;
        Ok((mu, log_var))
    }

    pub fn decode_graph(&self, tape: &mut Tape<'_, T>, bound: &BoundModel, z: Var) -> Result<Var, VaeError> {
        let start = self.arch.decoder_start();
        let mut h = z;
        for l in start..start + self.arch.hidden.len() {
            let (w, b) = bound.layer(l);
            let a = tape.linear(h, w, b)?;
            h = tape.relu(a);
        }
        let (w, b) = bound.layer(start + self.arch.hidden.len());
        let out = tape.linear(h, w, b)?;
        Ok(tape.softplus(out))
    }

    fn check_input(&self, x: &Tensor<T>, expected: usize) -> Result<(), VaeError> {
        if x.shape().len() != 2 || x.cols() != expected {
            return Err(VaeError::InputDim {
                expected,
                got: x.shape().last().copied().unwrap_or(0),
            });
        }
        if !x.is_finite() {
            return Err(VaeError::NonFiniteInput);
        }
        Ok(())
    }

    /// Posterior parameters `(μ, log σ²)` for a batch of frames (B×d_x).
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), VaeError> {
        self.check_input(x, self.arch.input_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant_ref(x);
        let (mu, lv) = self.encode_graph(&mut tape, &bound, xv)?;
        Ok((tape.value(mu).clone(), tape.value(lv).clone()))
    }

    /// Decoder mean for a batch of latents (B×d_z).
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>, VaeError> {
        self.check_input(z, self.arch.latent_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant_ref(z);
        let out = self.decode_graph(&mut tape, &bound, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Posterior means of plain `f64` rows.
    pub fn encode_mean_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, VaeError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = rows_to_tensor(rows)?;
        let (mu, _) = self.encode(&x)?;
        Ok(tensor_to_rows(&mu))
    }

    pub fn decode_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, VaeError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let z = rows_to_tensor(rows)?;
        Ok(tensor_to_rows(&self.decode(&z)?))
    }
}

pub(crate) fn rows_to_tensor<T: Scalar>(rows: &[Vec<f64>]) -> Result<Tensor<T>, VaeError> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(VaeError::InputDim {
            expected: cols,
            got: r.len(),
        });
    }
    let data = rows.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
    Ok(Tensor::matrix(rows.len(), cols, data)?)
}

pub(crate) fn tensor_to_rows<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_f64_lossy()).collect())
        .collect()
}

/// Standard normal noise of the given shape.
pub fn normal_noise<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<T> {
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.normal())).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Regularizer inputs for one batch.
#[derive(Debug, Clone, Copy)]
pub struct RegTerm<'r> {
    pub alpha: f64,
    /// Target-space class index per batch row.
    pub labels: &'r [Option<usize>],
    pub target: &'r [Vec<f64>],
    pub norm: TargetNormalization,
}

/// Nodes of one recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
    pub reg: Option<Var>,
    pub mu: Var,
}

/// Record `recon + β·KL (+ α·R)` for a batch `x` with reparameterization
/// noise `eps`. Both terms are averaged over the batch; the reconstruction
/// term is `½‖x − x̂‖²` and `R` uses the posterior means of the batch.
pub fn loss_graph<T: Scalar>(
    model: &VaeModel<T>,
    tape: &mut Tape<'_, T>,
    bound: &BoundModel,
    x: Var,
    eps: Var,
    beta: f64,
    reg: Option<RegTerm<'_>>,
) -> Result<LossGraph, VaeError> {
    let batch = tape.value(x).rows() as f64;
    let (mu, log_var) = model.encode_graph(tape, bound, x)?;
    let z = tape.gaussian_sample(mu, log_var, eps)?;
    let x_hat = model.decode_graph(tape, bound, z)?;

    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(diff);
    let sq_sum = tape.sum(sq);
    let recon = tape.scale(sq_sum, T::from_f64_lossy(0.5 / batch));

    let mu_sq = tape.square(mu);
    let var = tape.exp(log_var);
    let a = tape.add(mu_sq, var)?;
    let b = tape.sub(a, log_var)?;
    let c = tape.add_scalar(b, -T::one());
    let kl_sum = tape.sum(c);
    let kl = tape.scale(kl_sum, T::from_f64_lossy(0.5 / batch));

    let weighted_kl = tape.scale(kl, T::from_f64_lossy(beta));
    let mut total = tape.add(recon, weighted_kl)?;
    let mut reg_var = None;
    if let Some(r) = reg {
        if let Some(rv) = reg_loss_on_tape(tape, mu, r.labels, r.target, r.norm)? {
            let weighted = tape.scale(rv, T::from_f64_lossy(r.alpha));
            total = tape.add(total, weighted)?;
            reg_var = Some(rv);
        }
    }
    Ok(LossGraph {
        total,
        recon,
        kl,
        reg: reg_var,
        mu,
    })
}

/// `(loss, recon_term, kl_term)` of one reparameterized pass over `x`.
pub fn elbo_loss<T: Scalar>(
    model: &VaeModel<T>,
    x: &Tensor<T>,
    beta: f64,
    rng: &mut Rng,
) -> Result<(f64, f64, f64), VaeError> {
    if beta < 0.0 {
        return Err(VaeError::InvalidConfig("beta must be non-negative".into()));
    }
    model.check_input(x, model.arch.input_dim)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let xv = tape.constant_ref(x);
    let eps = tape.constant(normal_noise(x.rows(), model.arch.latent_dim, rng));
    let g = loss_graph(model, &mut tape, &bound, xv, eps, beta, None)?;
    let v = |var| tape.value(var).item().to_f64_lossy();
    Ok((v(g.total), v(g.recon), v(g.kl)))
}

/// Closed-form `½ Σ (μ² + σ² − log σ² − 1)` for one posterior.
pub fn gaussian_kl(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + Float::exp(*lv) - lv - 1.0)
        .sum::<f64>()
}

#[cfg(test)]
mod tests;
