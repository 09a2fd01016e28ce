//! Outer-loop learning: Reptile meta-training, strain-energy identity
//! pretraining, and validation-based checkpoint selection.

use crate::network::{
    backward_from_trace, forward_with_trace, init_standard, NetworkConfig, NetworkParameters,
    Provenance,
};
use crate::optim::{AdamState, NeuralPipeline, OptimError, OptimizeConfig};
use crate::rng::substream;
use crate::taskgen::Task;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Outer-loop update rule. Adam treats the negated Reptile step as a
/// gradient surrogate; the plain rule moves the initialization toward the
/// batch-mean adapted weights by a fixed fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OuterOptimizer {
    Adam,
    Plain,
}

/// Meta-training schedule and rates. Defaults are the full-scale settings;
/// desk-scale runs shrink the counts through the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub meta_iterations: usize,
    pub meta_batch: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub outer_optimizer: OuterOptimizer,
    /// Checkpoint/validation cadence in meta-iterations.
    pub validation_interval: usize,
    /// Adaptation steps used when scoring a checkpoint on validation tasks.
    pub validation_steps: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            meta_iterations: 6000,
            meta_batch: 5,
            inner_steps: 10,
            inner_lr: 1e-4,
            outer_lr: 1e-6,
            outer_optimizer: OuterOptimizer::Adam,
            validation_interval: 50,
            validation_steps: 10,
            seed: 0,
        }
    }
}

/// Parameters emitted at a validation point.
#[derive(Debug, Clone)]
pub struct MetaCheckpoint {
    pub iteration: usize,
    pub params: NetworkParameters,
    pub validation_loss: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLogRow {
    pub iteration: usize,
    /// Mean loss observed at the last inner step, over the batch's
    /// successful adaptations.
    pub mean_inner_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MetaTrainResult {
    pub checkpoints: Vec<MetaCheckpoint>,
    /// Checkpoint with the lowest post-adaptation validation loss.
    pub best: NetworkParameters,
    pub log: Vec<MetaLogRow>,
    /// Inner adaptations skipped because of solver failures.
    pub skipped_tasks: u64,
}

/// Fixed-step inner adaptation from `theta` with a fresh Adam state.
/// Returns the adapted values and the loss observed at the last step.
fn adapt_task(
    task: &Task,
    theta: &NetworkParameters,
    steps: usize,
    config: &OptimizeConfig,
) -> Result<(Vec<f64>, f64), OptimError> {
    let pipeline = NeuralPipeline::new(task, config);
    let mut params = theta.clone();
    let mut adam = AdamState::new(params.len());
    let mut last_loss = f64::NAN;
    for it in 0..steps {
        let eval = pipeline.evaluate(&params)?;
        if !eval.loss.is_finite() {
            return Err(OptimError::NonFiniteLoss { iteration: it + 1 });
        }
        last_loss = eval.loss;
        let grad = pipeline.gradient(&params, &eval);
        adam.step(&mut params.values, &grad, config.learning_rate)?;
    }
    Ok((params.values, last_loss))
}

/// Mean adapted loss over validation tasks: each task clones the
/// parameters, runs `steps` inner updates, and is scored by one final
/// evaluation (so `steps = 0` scores the initialization itself).
pub fn evaluate_validation(
    params: &NetworkParameters,
    tasks: &[Task],
    steps: usize,
    config: &OptimizeConfig,
) -> Result<f64, OptimError> {
    assert!(!tasks.is_empty(), "validation set must not be empty");
    let losses: Vec<Result<f64, OptimError>> = tasks
        .par_iter()
        .map(|task| {
            let pipeline = NeuralPipeline::new(task, config);
            let mut p = params.clone();
            let mut adam = AdamState::new(p.len());
            for _ in 0..steps {
                let eval = pipeline.evaluate(&p)?;
                let grad = pipeline.gradient(&p, &eval);
                adam.step(&mut p.values, &grad, config.learning_rate)?;
            }
            Ok(pipeline.evaluate(&p)?.loss)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / tasks.len() as f64)
}

/// Epoch-based batch sampler: the dataset order is reshuffled once per
/// epoch and consumed in batches, so every task is sampled exactly once per
/// epoch. Batches never span epochs.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: 0,
            rng: substream(seed, "meta/epochs"),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let take = size.min(self.order.len() - self.pos);
        let batch = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        batch
    }
}

/// Reptile meta-training. Per meta-iteration: adapt each batch task for
/// `inner_steps` from the current initialization with a fresh Adam state,
/// form the mean parameter shift, and apply the outer update. Failed
/// adaptations are skipped (the batch mean is over successes). Checkpoints
/// are scored on the validation set every `validation_interval` iterations
/// and at the end; the best one is returned.
pub fn reptile_train(
    train: &[Task],
    validation: &[Task],
    meta: &MetaConfig,
    pipeline_config: &OptimizeConfig,
    init: NetworkParameters,
) -> Result<MetaTrainResult, OptimError> {
    assert!(!train.is_empty(), "training set must not be empty");
    let inner_config = OptimizeConfig {
        learning_rate: meta.inner_lr,
        ..*pipeline_config
    };
    let mut theta = init;
    theta.provenance = Provenance::MetaLearned;
    let mut outer_adam = AdamState::new(theta.len());
    let mut sampler = EpochSampler::new(train.len(), meta.seed);
    let mut checkpoints: Vec<MetaCheckpoint> = Vec::new();
    let mut log = Vec::with_capacity(meta.meta_iterations);
    let mut skipped = 0u64;

    for iteration in 1..=meta.meta_iterations {
        let batch = sampler.next_batch(meta.meta_batch);
        let results: Vec<Result<(Vec<f64>, f64), OptimError>> = batch
            .par_iter()
            .map(|&ti| adapt_task(&train[ti], &theta, meta.inner_steps, &inner_config))
            .collect();

        // delta = mean over successes of (theta_task - theta); summing the
        // differences keeps zero-step adaptations at exactly zero
        let mut delta = vec![0.0f64; theta.len()];
        let mut mean_adapted = vec![0.0f64; theta.len()];
        let mut successes = 0usize;
        let mut loss_sum = 0.0;
        for result in results {
            match result {
                Ok((values, loss)) => {
                    for ((d, m), (v, t)) in delta
                        .iter_mut()
                        .zip(mean_adapted.iter_mut())
                        .zip(values.iter().zip(theta.values.iter()))
                    {
                        *d += v - t;
                        *m += v;
                    }
                    loss_sum += loss;
                    successes += 1;
                }
                Err(_) => skipped += 1,
            }
        }

        if successes > 0 {
            let inv = 1.0 / successes as f64;
            match meta.outer_optimizer {
                OuterOptimizer::Adam => {
                    let grad: Vec<f64> = delta.iter().map(|d| -(d * inv)).collect();
                    outer_adam.step(&mut theta.values, &grad, meta.outer_lr)?;
                }
                OuterOptimizer::Plain => {
                    // theta + lr * delta; the full step hands back the mean
                    // adapted weights bit-exactly
                    let lr = meta.outer_lr;
                    if lr == 1.0 {
                        for (t, m) in theta.values.iter_mut().zip(mean_adapted.iter()) {
                            *t = m * inv;
                        }
                    } else {
                        for (t, d) in theta.values.iter_mut().zip(delta.iter()) {
                            *t += lr * d * inv;
                        }
                    }
                }
            }
        }

        let mean_inner_loss = if successes > 0 {
            loss_sum / successes as f64
        } else {
            f64::NAN
        };

        let at_interval = meta.validation_interval > 0 && iteration % meta.validation_interval == 0;
        let validation_loss = if at_interval || iteration == meta.meta_iterations {
            let vl = if validation.is_empty() {
                f64::NAN
            } else {
                evaluate_validation(&theta, validation, meta.validation_steps, &inner_config)?
            };
            checkpoints.push(MetaCheckpoint {
                iteration,
                params: theta.clone(),
                validation_loss: vl,
            });
            Some(vl)
        } else {
            None
        };
        log.push(MetaLogRow {
            iteration,
            mean_inner_loss,
            validation_loss,
        });
    }

    let best = checkpoints
        .iter()
        .filter(|c| c.validation_loss.is_finite())
        .min_by(|a, b| a.validation_loss.partial_cmp(&b.validation_loss).unwrap())
        .map(|c| c.params.clone())
        .unwrap_or_else(|| theta.clone());

    Ok(MetaTrainResult {
        checkpoints,
        best,
        log,
        skipped_tasks: skipped,
    })
}

/// Pretrains the conditioned network to reproduce its strain-energy input:
/// full-batch MSE per task, tasks shuffled every epoch, Adam updates.
/// Returns the parameters (tagged pretrained) and the mean loss per epoch.
pub fn pretrain_identity(
    train: &[Task],
    net: &NetworkConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(NetworkParameters, Vec<f64>), OptimError> {
    assert!(net.conditioned, "identity pretraining needs the conditioned input");
    assert!(!train.is_empty());
    let mut params = init_standard(net, seed);
    let mut adam = AdamState::new(params.len());
    let mut rng = substream(seed, "pretrain/epochs");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &ti in &order {
            let task = &train[ti];
            let coords = task.disc.centroids_normalized();
            let n = task.energy.len();
            let (out, trace) = forward_with_trace(&params, &coords.view(), Some(&task.energy))?;
            let mut loss = 0.0;
            let mut cot = vec![0.0f64; n];
            for i in 0..n {
                let r = out[i] - task.energy[i];
                loss += r * r;
                cot[i] = 2.0 * r / n as f64;
            }
            loss /= n as f64;
            if !loss.is_finite() {
                return Err(OptimError::NonFiniteLoss { iteration: 0 });
            }
            loss_sum += loss;
            let grad = backward_from_trace(&params, &trace, &cot);
            adam.step(&mut params.values, &grad, lr)?;
        }
        epoch_losses.push(loss_sum / train.len() as f64);
    }

    params.provenance = Provenance::Pretrained;
    Ok((params, epoch_losses))
}

/// Mean squared identity error over a task set; scores pretraining on
/// held-out tasks.
pub fn identity_mse(params: &NetworkParameters, tasks: &[Task]) -> Result<f64, OptimError> {
    assert!(!tasks.is_empty());
    let mut total = 0.0;
    for task in tasks {
        let coords = task.disc.centroids_normalized();
        let out = crate::network::forward(params, &coords.view(), Some(&task.energy))?;
        let n = task.energy.len();
        let mse: f64 = out
            .iter()
            .zip(task.energy.iter())
            .map(|(o, e)| (o - e) * (o - e))
            .sum::<f64>()
            / n as f64;
        total += mse;
    }
    Ok(total / tasks.len() as f64)
}
