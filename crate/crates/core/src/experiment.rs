//! Filtered-training experiments: curriculum or static filtering against
//! unfiltered and single-rater baselines, plus the small-to-large model
//! transfer wiring.
//!
//! Raters are frozen here: experiments consume only score tables. The
//! training model is freshly initialized per seed from a mode-independent
//! seed stream, so runs with identical retained sets are bit-identical
//! across modes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::str::FromStr;

use crate::bilevel::{
    inner_loop, meta_gradient, meta_update, train_rater, InnerLoopConfig, MetaIterRecord,
    TrainRaterOutput, ValidationPool, DIVERGENCE_LIMIT,
};
use crate::corpus::{Corpus, CorpusSplit, Sample};
use crate::curriculum::{build_schedule, retention_mask, thresholds_from_scores};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, GradVector, LossSpec, OutputActivation};
use crate::rater::Rater;
use crate::score::ScoreTable;
use crate::seeds::derive_seed_indexed;

/// How training data is filtered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// No filtering.
    Unfiltered,
    /// One rater with the combined parameter budget, meta-trained on the
    /// pooled validation samples under the full-vector loss (all
    /// capabilities compressed into one scalar objective).
    Monolithic,
    /// One rater with the combined budget, meta-trained on the mean of the
    /// per-capability validation objectives.
    Pooled,
    /// One rater per capability composed with the union rule.
    SkillRater,
}

impl BaselineMode {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineMode::Unfiltered => "unfiltered",
            BaselineMode::Monolithic => "monolithic",
            BaselineMode::Pooled => "pooled",
            BaselineMode::SkillRater => "skillrater",
        }
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unfiltered" => Ok(BaselineMode::Unfiltered),
            "monolithic" => Ok(BaselineMode::Monolithic),
            "pooled" => Ok(BaselineMode::Pooled),
            "skillrater" => Ok(BaselineMode::SkillRater),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?}; expected unfiltered|monolithic|pooled|skillrater"
            ))),
        }
    }
}

impl std::fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Experiment parameters shared across modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Hidden layout of the small model raters are trained against.
    pub small_hidden: Vec<usize>,
    /// Hidden layout of the large model filtered training runs use.
    pub large_hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    pub eval_period: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final step size as a fraction of the initial one (linear decay;
    /// 1.0 keeps the step size constant).
    pub lr_decay_floor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            small_hidden: vec![32],
            large_hidden: vec![64, 64],
            seeds: vec![0, 1, 2, 3, 4],
            eval_period: 200,
            batch_size: 16,
            learning_rate: 0.08,
            lr_decay_floor: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no experiment seeds".into()));
        }
        if self.batch_size == 0 || self.eval_period == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and eval_period must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_floor) {
            return Err(Error::InvalidConfig(
                "lr_decay_floor must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub seed: u64,
    pub step: usize,
    pub capability: usize,
    pub loss: f64,
}

/// Final per-seed losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub per_capability: Vec<f64>,
    /// Unweighted mean over capabilities.
    pub overall: f64,
}

/// Full log of one experiment (one mode, all seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub mode: String,
    pub rows: Vec<MetricsRow>,
    pub per_seed: Vec<SeedSummary>,
    /// Mean final loss per capability across seeds.
    pub per_capability_mean: Vec<f64>,
    /// Mean of the per-seed overall losses.
    pub overall_mean: f64,
    /// Provenance of the score table the retention sets came from.
    pub rater_hashes: Vec<String>,
}

/// Steps and retained train-pool indices for one curriculum stage.
struct StagePlan {
    steps: usize,
    retained: Vec<usize>,
}

fn eval_sets(corpus: &Corpus, split: &CorpusSplit) -> Result<Vec<Vec<Sample>>> {
    split
        .pools
        .iter()
        .map(|p| corpus.samples_by_ids(&p.heldout_ids))
        .collect()
}

/// Held-out capability loss: utility-weighted squared error of output c
/// against the clean planted utility.
///
/// Two deliberate choices. The reference is the clean utility, not the noisy
/// recorded target, because benchmarks score correctness and noisy labels
/// would bury every mode under the same irreducible floor. And each sample
/// is weighted by its capability-c utility, because a benchmark's items all
/// probe the capability; a sample with nothing to say about capability c
/// (utility zero) contributes nothing to its score.
fn evaluate(model: &DenseNet, eval: &[Vec<Sample>]) -> Result<Vec<f64>> {
    eval.iter()
        .enumerate()
        .map(|(c, samples)| {
            let mut total = 0.0;
            let mut weight = 0.0;
            for s in samples {
                let u = s.planted_utility[c];
                if u > 0.0 {
                    total += u * model.loss(
                        &s.features,
                        &s.planted_utility,
                        LossSpec::SquaredErrorCoord(c),
                    )?;
                    weight += u;
                }
            }
            Ok(total / weight.max(f64::MIN_POSITIVE))
        })
        .collect()
}

/// Trains one model over the stage plan, logging held-out losses at step 0,
/// every `eval_period`, and the final step.
#[allow(clippy::too_many_arguments)]
fn run_single(
    mode_label: &str,
    train_pool: &[Sample],
    eval: &[Vec<Sample>],
    plan: &[StagePlan],
    hidden: &[usize],
    cfg: &ExperimentConfig,
    base_seed: u64,
    seed: u64,
) -> Result<Vec<MetricsRow>> {
    let feature_dim = train_pool[0].features.len();
    let out_dim = train_pool[0].targets.len();
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(feature_dim);
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(out_dim);

    // Model init and sampling streams are mode-independent, so modes with
    // identical retained sets produce identical runs.
    let mut model = DenseNet::new(
        &layer_sizes,
        OutputActivation::Identity,
        derive_seed_indexed(base_seed, "experiment-model", seed),
    )?;
    let mut rng =
        ChaCha12Rng::seed_from_u64(derive_seed_indexed(base_seed, "experiment-sampling", seed));

    let mut rows = Vec::new();
    let push_eval = |model: &DenseNet, step: usize, rows: &mut Vec<MetricsRow>| -> Result<()> {
        for (capability, loss) in evaluate(model, eval)?.into_iter().enumerate() {
            rows.push(MetricsRow {
                mode: mode_label.to_string(),
                seed,
                step,
                capability,
                loss,
            });
        }
        Ok(())
    };
    push_eval(&model, 0, &mut rows)?;

    let total_steps: usize = plan.iter().map(|p| p.steps).sum();
    let mut step = 0;
    for stage in plan {
        if stage.retained.is_empty() {
            return Err(Error::DegenerateRetention {
                fraction: 0.0,
                n: train_pool.len(),
            });
        }
        for _ in 0..stage.steps {
            let mut grad = GradVector::zeros(model.param_count());
            let inv = 1.0 / cfg.batch_size as f64;
            for _ in 0..cfg.batch_size {
                let s = &train_pool[stage.retained[rng.random_range(0..stage.retained.len())]];
                let (_, g) = model.loss_grad(&s.features, &s.targets, LossSpec::SquaredError)?;
                grad.add_scaled(&g, inv);
            }
            let decay = 1.0 - (1.0 - cfg.lr_decay_floor) * step as f64 / total_steps.max(1) as f64;
            let lr = cfg.learning_rate * decay;
            model.sgd_step_in_place(&grad, lr)?;
            step += 1;
            if step % cfg.eval_period == 0 || step == total_steps {
                push_eval(&model, step, &mut rows)?;
            }
        }
    }
    Ok(rows)
}

/// Retained train-pool indices for every curriculum stage of `table`.
fn curriculum_plan(
    table: &ScoreTable,
    train_pool: &[Sample],
    stages: usize,
    steps_per_stage: usize,
) -> Result<Vec<StagePlan>> {
    let schedule = build_schedule(table, stages, steps_per_stage)?;
    let row_index: HashMap<u64, usize> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id, i))
        .collect();
    schedule
        .stages
        .iter()
        .map(|stage| {
            let mask = retention_mask(table, &stage.thresholds)?;
            let retained = train_pool
                .iter()
                .enumerate()
                .filter_map(|(i, s)| {
                    let row = *row_index.get(&s.id)?;
                    mask.retained[row].then_some(i)
                })
                .collect();
            Ok(StagePlan {
                steps: stage.steps,
                retained,
            })
        })
        .collect()
}

fn summarize(
    mode_label: &str,
    rows: Vec<MetricsRow>,
    seeds: &[u64],
    capabilities: usize,
    rater_hashes: Vec<String>,
) -> MetricsLog {
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let final_step = rows
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.step)
            .max()
            .unwrap_or(0);
        let mut per_capability = vec![0.0; capabilities];
        for row in rows
            .iter()
            .filter(|r| r.seed == seed && r.step == final_step)
        {
            per_capability[row.capability] = row.loss;
        }
        let overall = per_capability.iter().sum::<f64>() / capabilities as f64;
        per_seed.push(SeedSummary {
            seed,
            per_capability,
            overall,
        });
    }
    let per_capability_mean: Vec<f64> = (0..capabilities)
        .map(|c| per_seed.iter().map(|s| s.per_capability[c]).sum::<f64>() / seeds.len() as f64)
        .collect();
    let overall_mean = per_seed.iter().map(|s| s.overall).sum::<f64>() / seeds.len() as f64;
    MetricsLog {
        mode: mode_label.to_string(),
        rows,
        per_seed,
        per_capability_mean,
        overall_mean,
        rater_hashes,
    }
}

/// Runs one mode across all configured seeds.
///
/// `scores` must be `None` for unfiltered and a frozen score table for the
/// filtered modes (C columns for the union rule, a single column for the
/// monolithic/pooled raters).
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    mode: BaselineMode,
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &CorpusSplit,
    scores: Option<&ScoreTable>,
    hidden: &[usize],
    stages: usize,
    steps_per_stage: usize,
    base_seed: u64,
) -> Result<MetricsLog> {
    cfg.validate()?;
    let train_pool = corpus.samples_by_ids(&split.train_ids)?;
    let eval = eval_sets(corpus, split)?;

    let (plan, rater_hashes) = match mode {
        BaselineMode::Unfiltered => {
            let all: Vec<usize> = (0..train_pool.len()).collect();
            (
                vec![StagePlan {
                    steps: stages * steps_per_stage,
                    retained: all,
                }],
                Vec::new(),
            )
        }
        BaselineMode::SkillRater => {
            let table = scores.ok_or_else(|| {
                Error::InvalidConfig("skillrater mode needs a score table".into())
            })?;
            if table.capabilities != corpus.capabilities {
                return Err(Error::InvalidConfig(format!(
                    "score table has {} columns for a {}-capability corpus",
                    table.capabilities, corpus.capabilities
                )));
            }
            (
                curriculum_plan(table, &train_pool, stages, steps_per_stage)?,
                table.rater_hashes.clone(),
            )
        }
        BaselineMode::Monolithic | BaselineMode::Pooled => {
            let table = scores
                .ok_or_else(|| Error::InvalidConfig(format!("{mode} mode needs a score table")))?;
            if table.capabilities != 1 {
                return Err(Error::InvalidConfig(format!(
                    "{mode} mode expects a single-column score table, got {}",
                    table.capabilities
                )));
            }
            (
                curriculum_plan(table, &train_pool, stages, steps_per_stage)?,
                table.rater_hashes.clone(),
            )
        }
    };

    let rows: Result<Vec<Vec<MetricsRow>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_single(
                mode.label(),
                &train_pool,
                &eval,
                &plan,
                hidden,
                cfg,
                base_seed,
                seed,
            )
        })
        .collect();
    let rows: Vec<MetricsRow> = rows?.into_iter().flatten().collect();
    Ok(summarize(
        mode.label(),
        rows,
        &cfg.seeds,
        corpus.capabilities,
        rater_hashes,
    ))
}

/// One static top-fraction run per entry of `fractions` plus the curriculum
/// run, all driven by a single rater's scores.
#[allow(clippy::too_many_arguments)]
pub fn static_topk_sweep(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    split: &CorpusSplit,
    scores: &ScoreTable,
    fractions: &[f64],
    hidden: &[usize],
    stages: usize,
    steps_per_stage: usize,
    base_seed: u64,
) -> Result<Vec<MetricsLog>> {
    cfg.validate()?;
    if scores.capabilities != 1 {
        return Err(Error::InvalidConfig(format!(
            "static sweep expects a single-column score table, got {}",
            scores.capabilities
        )));
    }
    let train_pool = corpus.samples_by_ids(&split.train_ids)?;
    let eval = eval_sets(corpus, split)?;
    let column = scores.column(0);
    let total_steps = stages * steps_per_stage;
    let row_index: HashMap<u64, usize> = scores
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id, i))
        .collect();

    let mut logs = Vec::with_capacity(fractions.len() + 1);
    for &fraction in fractions {
        if fraction <= 0.0 || fraction > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "retention fraction must be in (0, 1], got {fraction}"
            )));
        }
        if fraction * (column.len() as f64) < 1.0 {
            return Err(Error::DegenerateRetention {
                fraction,
                n: column.len(),
            });
        }
        let tau = thresholds_from_scores(&column, fraction)?;
        let retained: Vec<usize> = train_pool
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let row = *row_index.get(&s.id)?;
                (column[row] >= tau).then_some(i)
            })
            .collect();
        if retained.is_empty() {
            return Err(Error::DegenerateRetention {
                fraction,
                n: train_pool.len(),
            });
        }
        let label = format!("static_{:.2}", fraction);
        let plan = vec![StagePlan {
            steps: total_steps,
            retained,
        }];
        let rows: Result<Vec<Vec<MetricsRow>>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                run_single(
                    &label,
                    &train_pool,
                    &eval,
                    &plan,
                    hidden,
                    cfg,
                    base_seed,
                    seed,
                )
            })
            .collect();
        let rows: Vec<MetricsRow> = rows?.into_iter().flatten().collect();
        logs.push(summarize(
            &label,
            rows,
            &cfg.seeds,
            corpus.capabilities,
            scores.rater_hashes.clone(),
        ));
    }

    // Curriculum run over the same single-rater scores.
    let plan = curriculum_plan(scores, &train_pool, stages, steps_per_stage)?;
    let rows: Result<Vec<Vec<MetricsRow>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_single(
                "curriculum",
                &train_pool,
                &eval,
                &plan,
                hidden,
                cfg,
                base_seed,
                seed,
            )
        })
        .collect();
    let rows: Vec<MetricsRow> = rows?.into_iter().flatten().collect();
    logs.push(summarize(
        "curriculum",
        rows,
        &cfg.seeds,
        corpus.capabilities,
        scores.rater_hashes.clone(),
    ));

    Ok(logs)
}

/// Hidden width `w` such that `[in, w, .., w, 1]` at the capability raters'
/// depth matches `C` times one rater's parameter budget as closely as layer
/// sizing allows.
pub fn combined_budget_hidden(
    input_dim: usize,
    rater_hidden: &[usize],
    capabilities: usize,
) -> Vec<usize> {
    let per_rater = {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(rater_hidden);
        sizes.push(1);
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>()
    };
    let target = capabilities * per_rater;
    let depth = rater_hidden.len().max(1);
    let params_for = |w: usize| -> usize {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(w, depth));
        sizes.push(1);
        sizes.windows(2).map(|s| s[0] * s[1] + s[1]).sum()
    };
    let mut best = 1;
    let mut best_diff = usize::MAX;
    for w in 1..=4096 {
        let diff = params_for(w).abs_diff(target);
        if diff < best_diff {
            best_diff = diff;
            best = w;
        }
        if params_for(w) > target && diff > best_diff {
            break;
        }
    }
    vec![best; depth]
}

/// Sentinel capability id for raters trained on pooled validation data.
pub fn pooled_capability_id(capabilities: usize) -> usize {
    capabilities
}

/// Trains the monolithic baseline rater: combined parameter budget, pooled
/// validation samples, full-vector validation loss.
#[allow(clippy::too_many_arguments)]
pub fn train_monolithic_rater(
    model_init: &DenseNet,
    corpus: &Corpus,
    split: &CorpusSplit,
    rater_hidden: &[usize],
    temperature: f64,
    entropy_coeff: f64,
    cfg: &InnerLoopConfig,
    meta_iters: usize,
    seed: u64,
) -> Result<TrainRaterOutput> {
    let train_pool = corpus.samples_by_ids(&split.train_ids)?;
    let mut pooled_samples = Vec::new();
    for pool in &split.pools {
        pooled_samples.extend(corpus.samples_by_ids(&pool.validation_ids)?);
    }
    let capability = pooled_capability_id(corpus.capabilities);
    let pool = ValidationPool {
        capability_id: capability,
        samples: pooled_samples,
    };
    let hidden = combined_budget_hidden(corpus.feature_dim, rater_hidden, corpus.capabilities);
    let rater = Rater::new(
        corpus.feature_dim,
        &hidden,
        capability,
        temperature,
        entropy_coeff,
        derive_seed_indexed(seed, "rater-init", capability as u64),
    )?;
    train_rater(
        model_init,
        rater,
        &train_pool,
        &pool,
        cfg,
        meta_iters,
        LossSpec::SquaredError,
        LossSpec::SquaredError,
        derive_seed_indexed(seed, "rater-train", capability as u64),
    )
}

/// Trains the pooled-combined baseline rater: combined parameter budget,
/// validation drawn per capability, meta-gradient averaged over the C
/// per-capability objectives.
#[allow(clippy::too_many_arguments)]
pub fn train_pooled_rater(
    model_init: &DenseNet,
    corpus: &Corpus,
    split: &CorpusSplit,
    rater_hidden: &[usize],
    temperature: f64,
    entropy_coeff: f64,
    cfg: &InnerLoopConfig,
    meta_iters: usize,
    seed: u64,
) -> Result<TrainRaterOutput> {
    cfg.validate()?;
    let train_pool = corpus.samples_by_ids(&split.train_ids)?;
    let val_pools: Result<Vec<Vec<Sample>>> = split
        .pools
        .iter()
        .map(|p| corpus.samples_by_ids(&p.validation_ids))
        .collect();
    let val_pools = val_pools?;
    let capabilities = corpus.capabilities;
    let capability = pooled_capability_id(capabilities);
    let hidden = combined_budget_hidden(corpus.feature_dim, rater_hidden, capabilities);
    let mut rater = Rater::new(
        corpus.feature_dim,
        &hidden,
        capability,
        temperature,
        entropy_coeff,
        derive_seed_indexed(seed, "rater-init", capability as u64 + 1),
    )?;

    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed_indexed(
        seed,
        "rater-train",
        capability as u64 + 1,
    ));
    let mut model = model_init.clone();
    let mut log = Vec::with_capacity(meta_iters);
    let tail_start = meta_iters / 2;
    let mut tail_sum = vec![0.0; rater.param_count()];
    let mut tail_count = 0usize;

    crate::bilevel::advance_base_model(
        &mut model,
        &rater,
        &train_pool,
        cfg,
        LossSpec::SquaredError,
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
            crate::bilevel::advance_base_model(
                &mut model,
                &rater,
                &train_pool,
                cfg,
                LossSpec::SquaredError,
                cfg.warmup_steps,
                &mut rng,
            )?;
        }
        let trace = inner_loop(
            &model,
            &rater,
            &train_pool,
            cfg,
            LossSpec::SquaredError,
            &mut rng,
        )?;

        // Mean of the per-capability meta-gradients on the shared trace.
        let mut grad = GradVector::zeros(rater.param_count());
        let mut val_loss = 0.0;
        for (c, pool) in val_pools.iter().enumerate() {
            let batches: Vec<Vec<Sample>> = (0..cfg.val_microbatches)
                .map(|_| {
                    (0..cfg.microbatch_size)
                        .map(|_| pool[rng.random_range(0..pool.len())].clone())
                        .collect()
                })
                .collect();
            let meta = meta_gradient(&trace, &rater, &batches, LossSpec::SquaredErrorCoord(c))?;
            grad.add_scaled(&meta.grad, 1.0 / capabilities as f64);
            val_loss += meta.val_loss / capabilities as f64;
        }

        let scores: Vec<f64> = trace.weights.iter().flatten().copied().collect();
        let score_mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let score_std = (scores
            .iter()
            .map(|s| (s - score_mean) * (s - score_mean))
            .sum::<f64>()
            / scores.len() as f64)
            .sqrt();
        log.push(MetaIterRecord {
            iteration,
            inner_losses: trace.inner_losses.clone(),
            val_loss,
            meta_grad_norm: grad.norm(),
            score_mean,
            score_std,
        });
        if !val_loss.is_finite() || val_loss > DIVERGENCE_LIMIT {
            return Ok(TrainRaterOutput {
                rater,
                log,
                divergence: Some(crate::bilevel::DivergenceEvent {
                    iteration,
                    val_loss,
                }),
            });
        }

        rater = meta_update(&rater, &grad, cfg.outer_lr)?;
        if iteration >= tail_start {
            for (acc, p) in tail_sum.iter_mut().zip(rater.net().params()) {
                *acc += p;
            }
            tail_count += 1;
        }

        crate::bilevel::advance_base_model(
            &mut model,
            &rater,
            &train_pool,
            cfg,
            LossSpec::SquaredError,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, make_validation_pools, CorpusConfig, SplitConfig};
    use crate::score::{score_corpus, ScoreRow};

    fn fixture() -> (Corpus, CorpusSplit) {
        let corpus = generate_corpus(
            &CorpusConfig {
                n_samples: 2000,
                ..CorpusConfig::default()
            },
            77,
        )
        .unwrap();
        let split = make_validation_pools(
            &corpus,
            &SplitConfig {
                validation_size: 32,
                heldout_size: 100,
                audit_size: 500,
            },
            77,
        )
        .unwrap();
        (corpus, split)
    }

    fn quick_cfg() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![0, 1],
            eval_period: 50,
            batch_size: 8,
            learning_rate: 0.05,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn mode_labels_roundtrip() {
        for mode in [
            BaselineMode::Unfiltered,
            BaselineMode::Monolithic,
            BaselineMode::Pooled,
            BaselineMode::SkillRater,
        ] {
            assert_eq!(mode.label().parse::<BaselineMode>().unwrap(), mode);
        }
        assert!("fancy".parse::<BaselineMode>().is_err());
    }

    #[test]
    fn zero_steps_evaluates_initialization_identically_across_modes() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        let raters: Vec<Rater> = (0..3)
            .map(|c| Rater::new(16, &[8], c, 0.1, 0.2, c as u64).unwrap())
            .collect();
        let table = score_corpus(&corpus, &raters, vec![String::new(); 3]).unwrap();

        let unfiltered = run_experiment(
            BaselineMode::Unfiltered,
            &cfg,
            &corpus,
            &split,
            None,
            &[16],
            1,
            0,
            5,
        )
        .unwrap();
        let filtered = run_experiment(
            BaselineMode::SkillRater,
            &cfg,
            &corpus,
            &split,
            Some(&table),
            &[16],
            1,
            0,
            5,
        )
        .unwrap();
        for (a, b) in unfiltered.rows.iter().zip(&filtered.rows) {
            assert_eq!(a.step, 0);
            assert_eq!(a.loss, b.loss);
        }
    }

    #[test]
    fn full_fraction_static_run_equals_unfiltered_bitwise() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        let rater = Rater::new(16, &[8], 0, 0.1, 0.2, 3).unwrap();
        let table = score_corpus(&corpus, &[rater], vec![String::new()]).unwrap();

        let sweep =
            static_topk_sweep(&cfg, &corpus, &split, &table, &[1.0], &[16], 2, 25, 11).unwrap();
        let unfiltered = run_experiment(
            BaselineMode::Unfiltered,
            &cfg,
            &corpus,
            &split,
            None,
            &[16],
            2,
            25,
            11,
        )
        .unwrap();
        assert_eq!(sweep.len(), 2); // one fraction + curriculum
        for (a, b) in sweep[0].rows.iter().zip(&unfiltered.rows) {
            assert_eq!(a.loss, b.loss, "step {} cap {}", a.step, a.capability);
        }
    }

    #[test]
    fn sweep_emits_one_log_per_fraction_plus_curriculum() {
        let (corpus, split) = fixture();
        let cfg = ExperimentConfig {
            seeds: vec![0],
            ..quick_cfg()
        };
        let rater = Rater::new(16, &[8], 0, 0.1, 0.2, 3).unwrap();
        let table = score_corpus(&corpus, &[rater], vec![String::new()]).unwrap();
        let sweep = static_topk_sweep(
            &cfg,
            &corpus,
            &split,
            &table,
            &[0.25, 0.5, 0.75],
            &[16],
            2,
            10,
            13,
        )
        .unwrap();
        assert_eq!(sweep.len(), 4);
        assert_eq!(sweep[3].mode, "curriculum");
    }

    #[test]
    fn tiny_fraction_is_a_degenerate_retention_error() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        let rater = Rater::new(16, &[8], 0, 0.1, 0.2, 3).unwrap();
        let table = score_corpus(&corpus, &[rater], vec![String::new()]).unwrap();
        let fraction = 0.5 / corpus.len() as f64;
        assert!(matches!(
            static_topk_sweep(&cfg, &corpus, &split, &table, &[fraction], &[16], 1, 10, 13,),
            Err(Error::DegenerateRetention { .. })
        ));
    }

    #[test]
    fn missing_score_table_is_a_config_error() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        assert!(matches!(
            run_experiment(
                BaselineMode::SkillRater,
                &cfg,
                &corpus,
                &split,
                None,
                &[16],
                1,
                10,
                5,
            ),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn runs_are_reproducible() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        let a = run_experiment(
            BaselineMode::Unfiltered,
            &cfg,
            &corpus,
            &split,
            None,
            &[16],
            2,
            20,
            9,
        )
        .unwrap();
        let b = run_experiment(
            BaselineMode::Unfiltered,
            &cfg,
            &corpus,
            &split,
            None,
            &[16],
            2,
            20,
            9,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn combined_budget_is_within_rounding() {
        let rater_hidden = [32, 32];
        let hidden = combined_budget_hidden(16, &rater_hidden, 3);
        let rater_params = 16 * 32 + 32 + 32 * 32 + 32 + 32 + 1;
        let target = 3 * rater_params;
        let mut sizes = vec![16];
        sizes.extend_from_slice(&hidden);
        sizes.push(1);
        let got: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let rel = (got as f64 - target as f64).abs() / target as f64;
        assert!(rel <= 0.02, "budget {got} vs target {target} (rel {rel})");
    }

    #[test]
    fn monolithic_mode_rejects_multi_column_tables() {
        let (corpus, split) = fixture();
        let cfg = quick_cfg();
        let table = ScoreTable {
            capabilities: 3,
            rater_hashes: vec![String::new(); 3],
            rows: corpus
                .samples
                .iter()
                .map(|s| ScoreRow {
                    id: s.id,
                    scores: vec![0.5, 0.5, 0.5],
                })
                .collect(),
        };
        assert!(matches!(
            run_experiment(
                BaselineMode::Monolithic,
                &cfg,
                &corpus,
                &split,
                Some(&table),
                &[16],
                1,
                10,
                5,
            ),
            Err(Error::InvalidConfig(_))
        ));
    }
}
