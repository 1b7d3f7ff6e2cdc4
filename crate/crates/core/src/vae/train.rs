use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::{loss_graph, normal_noise, RegTerm, VaeError, VaeModel};
use crate::diff::{AdamConfig, AdamState, DiffError, Tape, Tensor};
use crate::ratings::TimbreTarget;
use crate::regularizer::TargetNormalization;
use crate::rng::Rng;
use crate::spectral::SpectralFrame;

/// Stream offset separating evaluation noise from training noise.
const EVAL_SEED_SALT: u64 = 0x5EED_E7A1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta_final: f64,
    pub warmup_epochs: usize,
    pub alpha: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Test metrics every this many epochs (and at each stage end); 0 disables.
    pub eval_every: usize,
    /// Importance samples for the test log-likelihood.
    pub eval_samples: usize,
    pub target_norm: TargetNormalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta_final: 2.0,
            warmup_epochs: 100,
            alpha: 0.1,
            stage1_epochs: 500,
            stage2_epochs: 100,
            learning_rate: 1e-4,
            batch_size: 64,
            seed: 0,
            eval_every: 50,
            eval_samples: 64,
            target_norm: TargetNormalization::Global,
        }
    }
}

impl TrainConfig {
    /// 5000 unregularized epochs followed by 1000 regularized ones.
    pub fn paper_scale() -> Self {
        Self {
            stage1_epochs: 5000,
            stage2_epochs: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: &str| Err(VaeError::InvalidConfig(m.into()));
        if self.warmup_epochs == 0 || self.stage1_epochs == 0 || self.stage2_epochs == 0 || self.batch_size == 0 {
            return bad("epoch counts and batch size must be positive");
        }
        if !(self.beta_final >= 0.0) || !(self.alpha >= 0.0) {
            return bad("beta_final and alpha must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive");
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs
    }

    pub fn stage_of(&self, epoch: usize) -> u8 {
        if epoch < self.stage1_epochs {
            1
        } else {
            2
        }
    }

    /// Warm-up during stage 1, `beta_final` throughout stage 2.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        if self.stage_of(epoch) == 2 {
            self.beta_final
        } else {
            warmup_beta(epoch, self)
        }
    }

    pub fn alpha_at(&self, epoch: usize) -> f64 {
        if self.stage_of(epoch) == 2 {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// `beta_final · min(1, epoch / warmup_epochs)`.
pub fn warmup_beta(epoch: usize, config: &TrainConfig) -> f64 {
    let ramp = (epoch as f64 / config.warmup_epochs.max(1) as f64).min(1.0);
    config.beta_final * ramp
}

/// Frames as a row matrix plus target-space class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor<f32>,
    pub labels: Vec<Option<usize>>,
}

impl Dataset {
    pub fn new(x: Tensor<f32>, labels: Vec<Option<usize>>) -> Result<Self, VaeError> {
        if x.shape().len() != 2 || x.rows() != labels.len() {
            return Err(VaeError::InvalidConfig(format!(
                "{} labels for data of shape {:?}",
                labels.len(),
                x.shape()
            )));
        }
        Ok(Self { x, labels })
    }

    /// Stack frames; labels are resolved against `target` when given.
    pub fn from_frames(frames: &[SpectralFrame], target: Option<&TimbreTarget>) -> Result<Self, VaeError> {
        let Some(first) = frames.first() else {
            return Err(VaeError::EmptySplit);
        };
        let cols = first.magnitudes.len();
        let mut data = Vec::with_capacity(frames.len() * cols);
        let mut labels = Vec::with_capacity(frames.len());
        for f in frames {
            if f.magnitudes.len() != cols {
                return Err(VaeError::InputDim {
                    expected: cols,
                    got: f.magnitudes.len(),
                });
            }
            data.extend(f.magnitudes.iter().map(|&v| v as f32));
            let label = match (target, &f.class_label) {
                (Some(t), Some(name)) => {
                    Some(t.index_of(name).ok_or_else(|| VaeError::UnknownClass(name.clone()))?)
                }
                _ => None,
            };
            labels.push(label);
        }
        Self::new(Tensor::matrix(frames.len(), cols, data)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        let mut ids: Vec<usize> = self.labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: u8,
    pub beta: f64,
    pub alpha: f64,
    /// Per-sample `½‖x − x̂‖²`, averaged over the epoch.
    pub recon: f64,
    pub kl: f64,
    /// Mean batch penalty over the batches where it was evaluated.
    pub reg: Option<f64>,
    pub test_recon: Option<f64>,
    pub test_ll: Option<f64>,
    pub skipped_steps: u64,
}

pub trait TrainObserver {
    /// Called after every epoch; return `false` to stop early.
    fn epoch_end(&mut self, metrics: &EpochMetrics, model: &VaeModel<f32>, optimizer: &AdamState<f32>) -> bool;
}

pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn epoch_end(&mut self, _: &EpochMetrics, _: &VaeModel<f32>, _: &AdamState<f32>) -> bool {
        true
    }
}

impl<F> TrainObserver for F
where
    F: FnMut(&EpochMetrics, &VaeModel<f32>, &AdamState<f32>) -> bool,
{
    fn epoch_end(&mut self, m: &EpochMetrics, model: &VaeModel<f32>, opt: &AdamState<f32>) -> bool {
        self(m, model, opt)
    }
}

/// Two-stage optimizer loop. Each epoch draws its randomness from its own
/// stream of the root seed, so a resumed run matches an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    optimizer: AdamState<f32>,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &VaeModel<f32>) -> Result<Self, VaeError> {
        config.validate()?;
        let optimizer = AdamState::new(config.adam(), model.params());
        Ok(Self {
            config,
            optimizer,
            epoch: 0,
        })
    }

    /// Continue from saved optimizer state after `epoch` completed epochs.
    pub fn resume(config: TrainConfig, optimizer: AdamState<f32>, epoch: usize) -> Result<Self, VaeError> {
        config.validate()?;
        Ok(Self {
            config,
            optimizer,
            epoch,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &AdamState<f32> {
        &self.optimizer
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    /// Train until the configured total, or until `observer` stops.
    pub fn run(
        &mut self,
        model: &mut VaeModel<f32>,
        train: &Dataset,
        test: Option<&Dataset>,
        target: Option<&TimbreTarget>,
        observer: &mut dyn TrainObserver,
    ) -> Result<Vec<EpochMetrics>, VaeError> {
        self.run_until(self.config.total_epochs(), model, train, test, target, observer)
    }

    pub fn run_until(
        &mut self,
        end_epoch: usize,
        model: &mut VaeModel<f32>,
        train: &Dataset,
        test: Option<&Dataset>,
        target: Option<&TimbreTarget>,
        observer: &mut dyn TrainObserver,
    ) -> Result<Vec<EpochMetrics>, VaeError> {
        if train.is_empty() {
            return Err(VaeError::EmptySplit);
        }
        if train.x.cols() != model.arch().input_dim {
            return Err(VaeError::InputDim {
                expected: model.arch().input_dim,
                got: train.x.cols(),
            });
        }
        if self.config.alpha > 0.0 && target.is_none() {
            return Err(VaeError::InvalidConfig("regularized stage needs a target space".into()));
        }
        let mut log = Vec::new();
        while self.epoch < end_epoch.min(self.config.total_epochs()) {
            let m = self.run_epoch(model, train, test, target)?;
            let keep_going = observer.epoch_end(&m, model, &self.optimizer);
            log.push(m);
            if !keep_going {
                break;
            }
        }
        Ok(log)
    }

    fn run_epoch(
        &mut self,
        model: &mut VaeModel<f32>,
        train: &Dataset,
        test: Option<&Dataset>,
        target: Option<&TimbreTarget>,
    ) -> Result<EpochMetrics, VaeError> {
        let epoch = self.epoch;
        let cfg = &self.config;
        let (stage, beta, alpha) = (cfg.stage_of(epoch), cfg.beta_at(epoch), cfg.alpha_at(epoch));
        let mut rng = Rng::with_stream(cfg.seed, 1 + epoch as u64);
        let regularize = alpha > 0.0 && target.is_some();
        let batches = make_batches(&train.labels, cfg.batch_size, regularize, &mut rng);
        let latent_dim = model.arch().latent_dim;
        let skipped_before = self.optimizer.skipped;

        let (mut recon_sum, mut kl_sum, mut rows) = (0.0, 0.0, 0usize);
        let (mut reg_sum, mut reg_batches) = (0.0, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let xb = train.x.select_rows(idx);
            let lb: Vec<Option<usize>> = idx.iter().map(|&i| train.labels[i]).collect();
            let eps = normal_noise::<f32>(idx.len(), latent_dim, &mut rng);
            let grads = {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape, true);
                let xv = tape.constant(xb);
                let ev = tape.constant(eps);
                let reg = target.filter(|_| regularize).map(|t| RegTerm {
                    alpha,
                    labels: &lb,
                    target: &t.coords,
                    norm: cfg.target_norm,
                });
                let g = loss_graph(model, &mut tape, &bound, xv, ev, beta, reg)?;
                let total = tape.value(g.total).item();
                if !total.is_finite() {
                    log::error!("non-finite loss at epoch {epoch}, batch {b}");
                    return Err(VaeError::NonFiniteLoss { epoch, batch: b });
                }
                let n = idx.len() as f64;
                rows += idx.len();
                recon_sum += tape.value(g.recon).item() as f64 * n;
                kl_sum += tape.value(g.kl).item() as f64 * n;
                if let Some(r) = g.reg {
                    reg_sum += tape.value(r).item() as f64;
                    reg_batches += 1;
                }
                let mut grads = tape.backward(g.total)?;
                bound
                    .vars()
                    .iter()
                    .zip(model.params())
                    .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                    .collect::<Vec<_>>()
            };
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            let mut param_refs: Vec<&mut Tensor<f32>> = model.params_mut().iter_mut().collect();
            match self.optimizer.step(&mut param_refs, &grad_refs) {
                Ok(()) | Err(DiffError::NonFiniteGradient { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }

        self.epoch += 1;
        // stratified batches revisit rows, so average over rows processed
        let n = rows.max(1) as f64;
        let stage_end = self.epoch == cfg.stage1_epochs || self.epoch == cfg.total_epochs();
        let due = cfg.eval_every > 0 && (self.epoch % cfg.eval_every == 0 || stage_end);
        let (test_recon, test_ll) = match test.filter(|t| due && !t.is_empty()) {
            Some(t) => {
                let mut erng = Rng::with_stream(cfg.seed ^ EVAL_SEED_SALT, epoch as u64);
                let e = evaluate(model, &t.x, cfg.eval_samples, &mut erng)?;
                (Some(e.mean_sq_err), Some(e.log_likelihood))
            }
            None => (None, None),
        };
        let m = EpochMetrics {
            epoch,
            stage,
            beta,
            alpha,
            recon: recon_sum / n,
            kl: kl_sum / n,
            reg: (reg_batches > 0).then(|| reg_sum / reg_batches as f64),
            test_recon,
            test_ll,
            skipped_steps: self.optimizer.skipped - skipped_before,
        };
        log::debug!("epoch {epoch} stage {stage} recon {:.5} kl {:.5} reg {:?}", m.recon, m.kl, m.reg);
        Ok(m)
    }
}

/// Shuffled mini-batches covering every row once. When `stratified`, each
/// batch opens with one random row per labeled class and is filled from the
/// shuffled order, so the penalty always sees every class.
fn make_batches(labels: &[Option<usize>], batch_size: usize, stratified: bool, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    rng.shuffle(&mut order);
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    if stratified {
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                pools.entry(*c).or_default().push(i);
            }
        }
    }
    let classes = pools.len();
    if classes < 3 || classes >= batch_size {
        return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    }
    order
        .chunks(batch_size - classes)
        .map(|chunk| {
            let mut batch: Vec<usize> = pools.values().map(|p| p[rng.below(p.len())]).collect();
            batch.extend_from_slice(chunk);
            batch
        })
        .collect()
}
