//! Bilevel meta-learning for raters.
//!
//! Inner loop: S steps of weighted SGD on the base model, accumulating
//! per-sample gradients across K streamed microbatches and applying one
//! update per step with step size `alpha / K`. Outer loop: a first-order
//! meta-gradient on the rater, formed by aligning the stored per-sample
//! train gradients with the post-inner-loop validation gradient; all model
//! states are treated as detached, only the rater-weight path is
//! differentiated. An entropy bonus on the score distribution is subtracted
//! from the meta-loss.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CapabilityPool, Corpus, Sample};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, GradVector, LossSpec};
use crate::rater::{binary_entropy_deriv, Rater};
use crate::seeds::derive_seed_indexed;

/// Validation loss above which a rater training run halts.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Inner/outer loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerLoopConfig {
    /// Inner SGD steps per meta-iteration (S).
    pub inner_steps: usize,
    /// Train microbatches accumulated per inner step (K).
    pub train_microbatches: usize,
    /// Validation microbatches averaged for the meta-gradient (K').
    pub val_microbatches: usize,
    /// Samples per microbatch.
    pub microbatch_size: usize,
    /// Inner-loop step size (alpha).
    pub inner_lr: f64,
    /// Outer-loop step size (eta).
    pub outer_lr: f64,
    /// Base-model steps taken between rater updates.
    pub meta_period: usize,
    /// Batch size for those base-model steps.
    pub base_batch_size: usize,
    /// Base-model steps taken before the first meta-iteration.
    pub warmup_steps: usize,
    /// Step size for the persistent base-model trajectory. Kept well below
    /// `inner_lr` so the base model stays mid-training for the whole rater
    /// run; the alignment signal degrades once the base model has converged.
    pub base_lr: f64,
    /// Meta-iterations between base-model restarts (0 = never restart).
    /// Each restart re-initializes and re-warms the base model, so the
    /// rater averages its signal over independent base trajectories instead
    /// of inheriting one trajectory's fixed residual structure.
    pub restart_period: usize,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig {
            inner_steps: 2,
            train_microbatches: 32,
            val_microbatches: 32,
            microbatch_size: 4,
            inner_lr: 0.05,
            outer_lr: 0.015,
            meta_period: 2,
            base_batch_size: 16,
            warmup_steps: 20,
            base_lr: 0.002,
            restart_period: 30,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::InvalidConfig("inner_steps must be >= 1".into()));
        }
        if self.train_microbatches == 0 || self.val_microbatches == 0 {
            return Err(Error::InvalidConfig(
                "microbatch counts must be >= 1".into(),
            ));
        }
        if self.microbatch_size == 0 {
            return Err(Error::InvalidConfig("microbatch_size must be >= 1".into()));
        }
        if self.inner_lr <= 0.0 || self.outer_lr <= 0.0 || self.base_lr <= 0.0 {
            return Err(Error::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the first-order meta-gradient needs from one inner loop: the
/// model states, the sampled microbatches with their weights, and the
/// unweighted per-sample loss gradients at every step.
#[derive(Debug, Clone)]
pub struct InnerTrace {
    /// theta^(0..S); `states.len() == inner_steps + 1`.
    pub states: Vec<DenseNet>,
    /// The K sampled train microbatches.
    pub microbatches: Vec<Vec<Sample>>,
    /// Rater weights, aligned with `microbatches`.
    pub weights: Vec<Vec<f64>>,
    /// Unweighted per-sample loss gradients: `sample_grads[s][k][i]` is
    /// `grad_theta loss(theta^(s); z_{k,i})`.
    pub sample_grads: Vec<Vec<Vec<GradVector>>>,
    /// Mean weighted microbatch loss per inner step, for logging.
    pub inner_losses: Vec<f64>,
    pub inner_lr: f64,
    pub train_loss: LossSpec,
    /// Capability of the rater the weights came from.
    pub capability_id: usize,
}

impl InnerTrace {
    pub fn final_state(&self) -> &DenseNet {
        self.states.last().unwrap()
    }

    fn microbatch_count(&self) -> usize {
        self.microbatches.len()
    }
}

/// `(1/|batch|) * sum_z w_z * loss(theta; z)`.
pub fn weighted_microbatch_loss(
    model: &DenseNet,
    batch: &[Sample],
    weights: &[f64],
    spec: LossSpec,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty microbatch".into()));
    }
    if batch.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples with {} weights",
            batch.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for (sample, &w) in batch.iter().zip(weights) {
        total += w * model.loss(&sample.features, &sample.targets, spec)?;
    }
    Ok(total / batch.len() as f64)
}

/// Runs S inner steps over explicit microbatches with fixed weights.
///
/// Each step accumulates gradients across the K microbatches and applies a
/// single update with step size `alpha / K` (streamed accumulation), so any
/// equal-size partition of the same samples produces the same trajectory.
pub fn inner_loop_on_batches(
    model: &DenseNet,
    microbatches: &[Vec<Sample>],
    weights: &[Vec<f64>],
    cfg: &InnerLoopConfig,
    capability_id: usize,
    train_loss: LossSpec,
) -> Result<InnerTrace> {
    cfg.validate()?;
    if microbatches.is_empty() {
        return Err(Error::InvalidArgument("no microbatches".into()));
    }
    if microbatches.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "microbatch/weight arity mismatch".into(),
        ));
    }
    for (k, (batch, w)) in microbatches.iter().zip(weights).enumerate() {
        if batch.is_empty() {
            return Err(Error::InvalidArgument(format!("microbatch {k} is empty")));
        }
        if batch.len() != w.len() {
            return Err(Error::InvalidArgument(format!(
                "microbatch {k}: {} samples with {} weights",
                batch.len(),
                w.len()
            )));
        }
        for &wz in w {
            if !(wz > 0.0 && wz < 1.0) {
                return Err(Error::ScoreDomain { value: wz });
            }
        }
    }

    let k_count = microbatches.len();
    let mut states = Vec::with_capacity(cfg.inner_steps + 1);
    let mut sample_grads = Vec::with_capacity(cfg.inner_steps);
    let mut inner_losses = Vec::with_capacity(cfg.inner_steps);
    states.push(model.clone());

    for step in 0..cfg.inner_steps {
        let current = states.last().unwrap();
        let mut accumulated = GradVector::zeros(current.param_count());
        let mut step_grads = Vec::with_capacity(k_count);
        let mut step_loss = 0.0;
        for (k, (batch, batch_weights)) in microbatches.iter().zip(weights).enumerate() {
            let inv_batch = 1.0 / batch.len() as f64;
            let mut batch_grads = Vec::with_capacity(batch.len());
            let mut batch_loss = 0.0;
            for (sample, &w) in batch.iter().zip(batch_weights) {
                let (loss, grad) = current
                    .loss_grad(&sample.features, &sample.targets, train_loss)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => Error::NonFinite(format!(
                            "inner loss at step {step}, microbatch {k}, sample {}",
                            sample.id
                        )),
                        other => other,
                    })?;
                batch_loss += w * loss;
                accumulated.add_scaled(&grad, w * inv_batch);
                batch_grads.push(grad);
            }
            step_loss += batch_loss * inv_batch;
            step_grads.push(batch_grads);
        }
        inner_losses.push(step_loss / k_count as f64);
        let next = current.sgd_step(&accumulated, cfg.inner_lr / k_count as f64)?;
        states.push(next);
        sample_grads.push(step_grads);
    }

    Ok(InnerTrace {
        states,
        microbatches: microbatches.to_vec(),
        weights: weights.to_vec(),
        sample_grads,
        inner_losses,
        inner_lr: cfg.inner_lr,
        train_loss,
        capability_id,
    })
}

/// Samples K microbatches from the train pool, scores them with the rater,
/// and runs the inner loop.
pub fn inner_loop(
    model: &DenseNet,
    rater: &Rater,
    train_pool: &[Sample],
    cfg: &InnerLoopConfig,
    train_loss: LossSpec,
    rng: &mut ChaCha12Rng,
) -> Result<InnerTrace> {
    cfg.validate()?;
    if train_pool.is_empty() {
        return Err(Error::InvalidArgument("empty train pool".into()));
    }
    if model.input_dim() != train_pool[0].features.len() {
        return Err(Error::InputShape {
            expected: model.input_dim(),
            got: train_pool[0].features.len(),
        });
    }
    let mut microbatches = Vec::with_capacity(cfg.train_microbatches);
    let mut weights = Vec::with_capacity(cfg.train_microbatches);
    for _ in 0..cfg.train_microbatches {
        let batch: Vec<Sample> = (0..cfg.microbatch_size)
            .map(|_| train_pool[rng.random_range(0..train_pool.len())].clone())
            .collect();
        let batch_weights = rater.score_batch(batch.iter().map(|s| s.features.as_slice()))?;
        microbatches.push(batch);
        weights.push(batch_weights);
    }
    inner_loop_on_batches(
        model,
        &microbatches,
        &weights,
        cfg,
        rater.capability_id(),
        train_loss,
    )
}

/// Meta-gradient output: the gradient over rater parameters plus the
/// validation loss it was computed against.
#[derive(Debug, Clone)]
pub struct MetaGrad {
    pub grad: GradVector,
    pub val_loss: f64,
}

/// First-order meta-gradient for the one-step-unrolled surrogate.
///
/// With `g_val` the mean validation gradient at theta^(S) and `G_{s,z}` the
/// stored per-sample train gradients,
///
/// `g_phi = -(alpha / (K * |B|)) * sum_{s,z} (g_val . G_{s,z}) * grad_phi r_phi(z)`
///
/// plus the entropy-bonus gradient over the meta-batch. No second-order
/// terms: every model state is read from the trace.
pub fn meta_gradient(
    trace: &InnerTrace,
    rater: &Rater,
    val_batches: &[Vec<Sample>],
    val_loss_spec: LossSpec,
) -> Result<MetaGrad> {
    if val_batches.is_empty() || val_batches.iter().any(|b| b.is_empty()) {
        return Err(Error::InvalidArgument(
            "validation batches must be nonempty".into(),
        ));
    }
    if trace.capability_id != rater.capability_id() {
        return Err(Error::InvalidConfig(format!(
            "trace built for capability {} but rater is for capability {}",
            trace.capability_id,
            rater.capability_id()
        )));
    }

    let final_state = trace.final_state();

    // g_val: mean over K' batches of the batch-mean validation gradient.
    let mut g_val = GradVector::zeros(final_state.param_count());
    let mut val_loss = 0.0;
    for batch in val_batches {
        let inv = 1.0 / batch.len() as f64;
        for sample in batch {
            let (loss, grad) =
                final_state.loss_grad(&sample.features, &sample.targets, val_loss_spec)?;
            val_loss += loss * inv;
            g_val.add_scaled(&grad, inv);
        }
    }
    let inv_batches = 1.0 / val_batches.len() as f64;
    g_val.scale(inv_batches);
    val_loss *= inv_batches;

    // Alignment coefficient per occurrence, summed over inner steps.
    let k_count = trace.microbatch_count();
    let mut g_phi = GradVector::zeros(rater.param_count());
    let n_total: usize = trace.microbatches.iter().map(|b| b.len()).sum();
    let entropy_coeff = rater.entropy_coeff();

    for (k, batch) in trace.microbatches.iter().enumerate() {
        let align_scale = -trace.inner_lr / (k_count * batch.len()) as f64;
        for (i, sample) in batch.iter().enumerate() {
            let mut alignment = 0.0;
            for step_grads in &trace.sample_grads {
                alignment += g_val.dot(&step_grads[k][i]);
            }
            let (score, score_grad) = rater.score_param_grad(&sample.features)?;
            let mut coeff = align_scale * alignment;
            if entropy_coeff > 0.0 {
                coeff -= entropy_coeff * binary_entropy_deriv(score) / n_total as f64;
            }
            g_phi.add_scaled(&score_grad, coeff);
        }
    }

    if !g_phi.is_finite() {
        return Err(Error::NonFinite("meta-gradient".into()));
    }
    Ok(MetaGrad {
        grad: g_phi,
        val_loss,
    })
}

/// `phi' = phi - eta * g_phi`.
pub fn meta_update(rater: &Rater, g_phi: &GradVector, eta: f64) -> Result<Rater> {
    rater.stepped(g_phi, eta)
}

/// `full = B*L*H`, `streamed = (B/K)*L*H`: peak activation footprint of the
/// full-batch versus streamed inner loop under a unit-constant model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub full: f64,
    pub streamed: f64,
}

pub fn activation_memory_estimate(
    batch: u64,
    seq_len: u64,
    hidden: u64,
    microbatches: u64,
) -> Result<MemoryEstimate> {
    if batch == 0 || seq_len == 0 || hidden == 0 || microbatches == 0 {
        return Err(Error::InvalidArgument(
            "memory estimate inputs must be positive".into(),
        ));
    }
    if !batch.is_multiple_of(microbatches) {
        return Err(Error::InvalidArgument(format!(
            "microbatch count {microbatches} does not divide batch size {batch}"
        )));
    }
    let full = (batch * seq_len * hidden) as f64;
    let streamed = ((batch / microbatches) * seq_len * hidden) as f64;
    Ok(MemoryEstimate { full, streamed })
}

/// A source of capability-specific validation samples.
///
/// Keeping this behind a trait lets tests double it with an access logger to
/// prove a rater never touches another capability's validation data.
pub trait ValidationSource {
    fn capability_id(&self) -> usize;
    fn validation_samples(&self) -> &[Sample];
}

/// Materialized validation pool for one capability.
#[derive(Debug, Clone)]
pub struct ValidationPool {
    pub capability_id: usize,
    pub samples: Vec<Sample>,
}

impl ValidationPool {
    pub fn from_split(corpus: &Corpus, pool: &CapabilityPool) -> Result<ValidationPool> {
        Ok(ValidationPool {
            capability_id: pool.capability_id,
            samples: corpus.samples_by_ids(&pool.validation_ids)?,
        })
    }
}

impl ValidationSource for ValidationPool {
    fn capability_id(&self) -> usize {
        self.capability_id
    }

    fn validation_samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// One row of the rater training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIterRecord {
    pub iteration: usize,
    /// Mean weighted inner loss per step.
    pub inner_losses: Vec<f64>,
    /// Validation loss at theta^(S).
    pub val_loss: f64,
    pub meta_grad_norm: f64,
    pub score_mean: f64,
    pub score_std: f64,
}

/// Divergence event: training halted because validation loss blew up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEvent {
    pub iteration: usize,
    pub val_loss: f64,
}

/// Result of a rater training run.
#[derive(Debug, Clone)]
pub struct TrainRaterOutput {
    pub rater: Rater,
    pub log: Vec<MetaIterRecord>,
    /// Set when the divergence guard halted the run early.
    pub divergence: Option<DivergenceEvent>,
}

/// Trains one rater for `meta_iters` outer iterations.
///
/// Each iteration snapshots the base model, runs the inner loop, applies the
/// first-order meta-update, then advances the persistent base model by
/// `meta_period` weighted SGD steps with the updated rater.
#[allow(clippy::too_many_arguments)]
pub fn train_rater<V: ValidationSource>(
    model_init: &DenseNet,
    rater: Rater,
    train_pool: &[Sample],
    val: &V,
    cfg: &InnerLoopConfig,
    meta_iters: usize,
    val_loss_spec: LossSpec,
    train_loss_spec: LossSpec,
    seed: u64,
) -> Result<TrainRaterOutput> {
    cfg.validate()?;
    if rater.capability_id() != val.capability_id() {
        return Err(Error::InvalidConfig(format!(
            "rater for capability {} paired with validation pool {}",
            rater.capability_id(),
            val.capability_id()
        )));
    }
    if val.validation_samples().is_empty() {
        return Err(Error::InvalidArgument("empty validation pool".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut model = model_init.clone();
    let mut rater = rater;
    let mut log = Vec::with_capacity(meta_iters);

    // Polyak tail average: the rater iterate random-walks around its
    // equilibrium once scores separate, so the returned rater is the mean of
    // the second half of the trajectory rather than wherever the walk ends.
    let tail_start = meta_iters / 2;
    let mut tail_sum = vec![0.0; rater.param_count()];
    let mut tail_count = 0usize;

    advance_base_model(
        &mut model,
        &rater,
        train_pool,
        cfg,
        train_loss_spec,
        cfg.warmup_steps,
        &mut rng,
    )?;

    for iteration in 0..meta_iters {
        if cfg.restart_period > 0 && iteration > 0 && iteration % cfg.restart_period == 0 {
            model = DenseNet::new(
                model_init.layer_sizes(),
                model_init.output_activation(),
                rng.random(),
            )?;
            advance_base_model(
                &mut model,
                &rater,
                train_pool,
                cfg,
                train_loss_spec,
                cfg.warmup_steps,
                &mut rng,
            )?;
        }
        let trace = inner_loop(&model, &rater, train_pool, cfg, train_loss_spec, &mut rng)?;

        let val_samples = val.validation_samples();
        let val_batches: Vec<Vec<Sample>> = (0..cfg.val_microbatches)
            .map(|_| {
                (0..cfg.microbatch_size)
                    .map(|_| val_samples[rng.random_range(0..val_samples.len())].clone())
                    .collect()
            })
            .collect();

        let meta = meta_gradient(&trace, &rater, &val_batches, val_loss_spec)?;
        let scores: Vec<f64> = trace.weights.iter().flatten().copied().collect();
        let score_mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let score_std = (scores
            .iter()
            .map(|s| (s - score_mean) * (s - score_mean))
            .sum::<f64>()
            / scores.len() as f64)
            .sqrt();
        let record = MetaIterRecord {
            iteration,
            inner_losses: trace.inner_losses.clone(),
            val_loss: meta.val_loss,
            meta_grad_norm: meta.grad.norm(),
            score_mean,
            score_std,
        };
        let diverged = !meta.val_loss.is_finite() || meta.val_loss > DIVERGENCE_LIMIT;
        log.push(record);
        if diverged {
            return Ok(TrainRaterOutput {
                rater,
                log,
                divergence: Some(DivergenceEvent {
                    iteration,
                    val_loss: meta.val_loss,
                }),
            });
        }

        rater = meta_update(&rater, &meta.grad, cfg.outer_lr)?;
        if iteration >= tail_start {
            for (acc, p) in tail_sum.iter_mut().zip(rater.net().params()) {
                *acc += p;
            }
            tail_count += 1;
        }

        // Advance the persistent base model on weighted data.
        advance_base_model(
            &mut model,
            &rater,
            train_pool,
            cfg,
            train_loss_spec,
            cfg.meta_period,
            &mut rng,
        )?;
    }

    if tail_count > 0 {
        let averaged: Vec<f64> = tail_sum.iter().map(|s| s / tail_count as f64).collect();
        let net = DenseNet::from_params(
            rater.net().layer_sizes(),
            rater.net().output_activation(),
            averaged,
            rater.net().init_seed(),
        )?;
        rater = Rater::from_net(
            net,
            rater.capability_id(),
            rater.temperature(),
            rater.entropy_coeff(),
        )?;
    }

    Ok(TrainRaterOutput {
        rater,
        log,
        divergence: None,
    })
}

/// Weighted SGD steps of the persistent base model.
pub(crate) fn advance_base_model(
    model: &mut DenseNet,
    rater: &Rater,
    train_pool: &[Sample],
    cfg: &InnerLoopConfig,
    train_loss_spec: LossSpec,
    steps: usize,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    for _ in 0..steps {
        let batch: Vec<&Sample> = (0..cfg.base_batch_size)
            .map(|_| &train_pool[rng.random_range(0..train_pool.len())])
            .collect();
        let mut grad = GradVector::zeros(model.param_count());
        let inv = 1.0 / batch.len() as f64;
        for sample in batch {
            let w = rater.score(&sample.features)?;
            let (_, g) =
                model.weighted_loss_grad(&sample.features, &sample.targets, train_loss_spec, w)?;
            grad.add_scaled(&g, inv);
        }
        model.sgd_step_in_place(&grad, cfg.base_lr)?;
    }
    Ok(())
}

/// Shape of the rater nets used by the multi-rater driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterConfig {
    pub hidden: Vec<usize>,
    pub temperature: f64,
    pub entropy_coeff: f64,
}

impl Default for RaterConfig {
    fn default() -> Self {
        RaterConfig {
            hidden: vec![32, 32],
            temperature: 0.1,
            entropy_coeff: 0.2,
        }
    }
}

/// Trains the C capability raters against the shared train pool, each on its
/// own validation pool. Raters run in parallel; each derives its own RNG
/// stream, so results do not depend on thread scheduling.
pub fn train_capability_raters(
    model_init: &DenseNet,
    corpus: &Corpus,
    split: &crate::corpus::CorpusSplit,
    rater_cfg: &RaterConfig,
    cfg: &InnerLoopConfig,
    meta_iters: usize,
    base_seed: u64,
) -> Result<Vec<TrainRaterOutput>> {
    use rayon::prelude::*;

    let train_pool = corpus.samples_by_ids(&split.train_ids)?;
    let pools: Result<Vec<ValidationPool>> = split
        .pools
        .iter()
        .map(|p| ValidationPool::from_split(corpus, p))
        .collect();
    let pools = pools?;

    pools
        .par_iter()
        .map(|pool| {
            let c = pool.capability_id;
            let rater = Rater::new(
                corpus.feature_dim,
                &rater_cfg.hidden,
                c,
                rater_cfg.temperature,
                rater_cfg.entropy_coeff,
                derive_seed_indexed(base_seed, "rater-init", c as u64),
            )?;
            train_rater(
                model_init,
                rater,
                &train_pool,
                pool,
                cfg,
                meta_iters,
                LossSpec::SquaredErrorCoord(c),
                LossSpec::SquaredError,
                derive_seed_indexed(base_seed, "rater-train", c as u64),
            )
        })
        .collect()
}
