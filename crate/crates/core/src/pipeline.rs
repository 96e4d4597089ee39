//! File-level orchestration: each function backs one CLI subcommand, writes
//! its artifacts into the run directory, and echoes the full configuration so
//! the run can be reproduced from the echo alone.
//!
//! All human-facing CSV and table output uses fixed 6-decimal formatting;
//! JSONL artifacts keep full precision so read-back is exact.

use std::path::{Path, PathBuf};

use crate::analysis::orthogonality_report;
use crate::bilevel::{train_capability_raters, MetaIterRecord, TrainRaterOutput};
use crate::config::PipelineConfig;
use crate::corpus::{
    generate_corpus, make_validation_pools, read_corpus_jsonl, write_corpus_jsonl, Corpus,
    CorpusSplit,
};
use crate::curriculum::{build_schedule, Schedule};
use crate::error::{Error, Result};
use crate::experiment::{
    run_experiment, static_topk_sweep, train_monolithic_rater, train_pooled_rater, BaselineMode,
    MetricsLog,
};
use crate::nn::{DenseNet, OutputActivation};
use crate::rater::Rater;
use crate::score::{score_corpus, sha256_file, verify_provenance, ScoreTable};
use crate::seeds::derive_seed;

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn echo_config(cfg: &PipelineConfig, out: &Path, command: &str) -> Result<()> {
    cfg.write_echo(&out.join(format!("{command}_config.json")))
}

/// The base model raters are trained against: the small inner model.
pub fn inner_model(cfg: &PipelineConfig) -> Result<DenseNet> {
    let mut layer_sizes = vec![cfg.corpus.feature_dim];
    layer_sizes.extend_from_slice(&cfg.experiment.small_hidden);
    layer_sizes.push(cfg.corpus.capabilities);
    DenseNet::new(
        &layer_sizes,
        OutputActivation::Identity,
        derive_seed(cfg.seed, "inner-model"),
    )
}

/// `generate`: corpus JSONL plus config echo.
pub fn cmd_generate(cfg: &PipelineConfig, out: &Path) -> Result<Corpus> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    write_corpus_jsonl(&corpus, &out.join("corpus.jsonl"))?;
    echo_config(cfg, out, "generate")?;
    Ok(corpus)
}

/// Derives the train/validation/held-out partition for `corpus` under `cfg`.
pub fn split_for(cfg: &PipelineConfig, corpus: &Corpus) -> Result<CorpusSplit> {
    make_validation_pools(corpus, &cfg.split, cfg.seed)
}

fn rater_path(out: &Path, capability: usize) -> PathBuf {
    out.join("raters").join(format!("rater_{capability}.json"))
}

fn baseline_path(out: &Path, name: &str) -> PathBuf {
    out.join("raters").join(format!("{name}.json"))
}

fn write_train_log(path: &Path, log: &[MetaIterRecord], inner_steps: usize) -> Result<()> {
    let mut text = String::from("iteration");
    for s in 0..inner_steps {
        text.push_str(&format!(",inner_loss_{s}"));
    }
    text.push_str(",val_loss,meta_grad_norm,score_mean,score_std\n");
    for rec in log {
        text.push_str(&rec.iteration.to_string());
        for s in 0..inner_steps {
            text.push(',');
            text.push_str(&fmt6(rec.inner_losses.get(s).copied().unwrap_or(f64::NAN)));
        }
        text.push(',');
        text.push_str(&fmt6(rec.val_loss));
        text.push(',');
        text.push_str(&fmt6(rec.meta_grad_norm));
        text.push(',');
        text.push_str(&fmt6(rec.score_mean));
        text.push(',');
        text.push_str(&fmt6(rec.score_std));
        text.push('\n');
    }
    write_text(path, &text)
}

/// `train-raters`: one checkpoint and training-log CSV per capability;
/// with `include_baselines`, also the monolithic and pooled raters.
pub fn cmd_train_raters(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out: &Path,
    include_baselines: bool,
) -> Result<Vec<TrainRaterOutput>> {
    cfg.validate()?;
    ensure_dir(&out.join("raters"))?;
    let corpus = read_corpus_jsonl(corpus_path)?;
    let split = split_for(cfg, &corpus)?;
    let model = inner_model(cfg)?;

    let outputs = train_capability_raters(
        &model,
        &corpus,
        &split,
        &cfg.rater,
        &cfg.inner,
        cfg.meta_iters,
        cfg.seed,
    )?;
    for output in &outputs {
        let c = output.rater.capability_id();
        output.rater.save(&rater_path(out, c))?;
        write_train_log(
            &out.join("raters").join(format!("train_log_{c}.csv")),
            &output.log,
            cfg.inner.inner_steps,
        )?;
        if let Some(event) = output.divergence {
            return Err(Error::InvalidConfig(format!(
                "rater {c} diverged at iteration {} (validation loss {:.3e}); log written",
                event.iteration, event.val_loss
            )));
        }
    }

    if include_baselines {
        let monolithic = train_monolithic_rater(
            &model,
            &corpus,
            &split,
            &cfg.rater.hidden,
            cfg.rater.temperature,
            cfg.rater.entropy_coeff,
            &cfg.inner,
            cfg.meta_iters,
            derive_seed(cfg.seed, "monolithic"),
        )?;
        monolithic.rater.save(&baseline_path(out, "monolithic"))?;
        write_train_log(
            &out.join("raters").join("train_log_monolithic.csv"),
            &monolithic.log,
            cfg.inner.inner_steps,
        )?;
        let pooled = train_pooled_rater(
            &model,
            &corpus,
            &split,
            &cfg.rater.hidden,
            cfg.rater.temperature,
            cfg.rater.entropy_coeff,
            &cfg.inner,
            cfg.meta_iters,
            derive_seed(cfg.seed, "pooled"),
        )?;
        pooled.rater.save(&baseline_path(out, "pooled"))?;
        write_train_log(
            &out.join("raters").join("train_log_pooled.csv"),
            &pooled.log,
            cfg.inner.inner_steps,
        )?;
    }

    echo_config(cfg, out, "train_raters")?;
    Ok(outputs)
}

/// `score`: score table JSONL over the whole corpus for the capability
/// raters, plus single-column tables for any baseline rater checkpoints
/// found next to them.
pub fn cmd_score(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    raters_dir: &Path,
    out: &Path,
) -> Result<ScoreTable> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpus = read_corpus_jsonl(corpus_path)?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot score an empty corpus".into(),
        ));
    }

    let mut raters = Vec::with_capacity(corpus.capabilities);
    let mut hashes = Vec::with_capacity(corpus.capabilities);
    for c in 0..corpus.capabilities {
        let path = raters_dir.join(format!("rater_{c}.json"));
        raters.push(Rater::load(&path)?);
        hashes.push(sha256_file(&path)?);
    }
    let table = score_corpus(&corpus, &raters, hashes)?;
    table.write_jsonl(&out.join("scores.jsonl"))?;

    for name in ["monolithic", "pooled"] {
        let path = raters_dir.join(format!("{name}.json"));
        if path.exists() {
            let rater = Rater::load(&path)?;
            let hash = sha256_file(&path)?;
            let single = score_corpus(&corpus, &[rater], vec![hash])?;
            single.write_jsonl(&out.join(format!("scores_{name}.jsonl")))?;
        }
    }

    echo_config(cfg, out, "score")?;
    Ok(table)
}

/// Renders the schedule as a fixed-width table.
pub fn format_schedule_table(schedule: &Schedule) -> String {
    let mut text = String::from(
        "stage  per-rater top-k %  samples retained  effective % (target)  effective % (measured)  steps\n",
    );
    for s in &schedule.stages {
        text.push_str(&format!(
            "{:>5}  {:>17}  {:>16}  {:>20}  {:>22}  {:>5}\n",
            s.stage,
            fmt6(100.0 * s.per_rater_fraction),
            s.retained_count,
            fmt6(100.0 * s.target_effective),
            fmt6(100.0 * s.measured_effective),
            s.steps
        ));
    }
    for note in &schedule.notes {
        text.push_str(&format!("note: {note}\n"));
    }
    text
}

fn schedule_csv(schedule: &Schedule) -> String {
    let mut text = String::from(
        "stage,per_rater_topk_pct,samples_retained,effective_target_pct,effective_measured_pct,steps\n",
    );
    for s in &schedule.stages {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.stage,
            fmt6(100.0 * s.per_rater_fraction),
            s.retained_count,
            fmt6(100.0 * s.target_effective),
            fmt6(100.0 * s.measured_effective),
            s.steps
        ));
    }
    for note in &schedule.notes {
        text.push_str(&format!("# note: {note}\n"));
    }
    text
}

/// `schedule`: curriculum CSV plus the printed table.
pub fn cmd_schedule(
    cfg: &PipelineConfig,
    scores_path: &Path,
    out: &Path,
) -> Result<(Schedule, String)> {
    cfg.validate()?;
    ensure_dir(out)?;
    let table = ScoreTable::read_jsonl(scores_path)?;
    table.validate()?;
    let schedule = build_schedule(
        &table,
        cfg.curriculum.stages,
        cfg.curriculum.steps_per_stage,
    )?;
    write_text(&out.join("schedule.csv"), &schedule_csv(&schedule))?;
    echo_config(cfg, out, "schedule")?;
    let rendered = format_schedule_table(&schedule);
    Ok((schedule, rendered))
}

/// `analyze`: orthogonality report JSON plus the score-pair scatter CSV.
pub fn cmd_analyze(
    cfg: &PipelineConfig,
    scores_path: &Path,
    out: &Path,
) -> Result<crate::analysis::AnalysisReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let table = ScoreTable::read_jsonl(scores_path)?;
    table.validate()?;
    let report = orthogonality_report(&table)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidConfig(format!("report serialization failed: {e}")))?;
    write_text(&out.join("analysis.json"), &json)?;

    // Plot-ready 2D projections: every capability pair, one row per sample.
    let mut csv = String::from("pair_a,pair_b,score_a,score_b\n");
    for a in 0..table.capabilities {
        for b in (a + 1)..table.capabilities {
            for row in &table.rows {
                csv.push_str(&format!(
                    "{a},{b},{},{}\n",
                    fmt6(row.scores[a]),
                    fmt6(row.scores[b])
                ));
            }
        }
    }
    write_text(&out.join("score_pairs.csv"), &csv)?;
    echo_config(cfg, out, "analyze")?;
    Ok(report)
}

fn metrics_csv(logs: &[&MetricsLog]) -> String {
    let mut text = String::from("mode,seed,step,capability,loss\n");
    for log in logs {
        for row in &log.rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                row.mode,
                row.seed,
                row.step,
                row.capability,
                fmt6(row.loss)
            ));
        }
    }
    text
}

/// Summary serialization without the row-level data (that lives in the CSV).
#[derive(Debug, serde::Serialize)]
struct SummaryJson<'a> {
    mode: &'a str,
    per_seed: &'a [crate::experiment::SeedSummary],
    per_capability_mean: &'a [f64],
    overall_mean: f64,
    rater_hashes: &'a [String],
}

fn write_summary(log: &MetricsLog, path: &Path) -> Result<()> {
    let summary = SummaryJson {
        mode: &log.mode,
        per_seed: &log.per_seed,
        per_capability_mean: &log.per_capability_mean,
        overall_mean: log.overall_mean,
        rater_hashes: &log.rater_hashes,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::InvalidConfig(format!("summary serialization failed: {e}")))?;
    write_text(path, &json)
}

/// `experiment`: one filtered-training run; metrics CSV plus JSON summary.
///
/// Frozen-rater wiring: the score table's recorded checkpoint hashes are
/// verified against the rater files both before and after the run.
pub fn cmd_experiment(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    scores_dir: &Path,
    raters_dir: &Path,
    mode: BaselineMode,
    out: &Path,
) -> Result<MetricsLog> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpus = read_corpus_jsonl(corpus_path)?;
    let split = split_for(cfg, &corpus)?;

    let (table, checkpoint_paths): (Option<ScoreTable>, Vec<PathBuf>) = match mode {
        BaselineMode::Unfiltered => (None, Vec::new()),
        BaselineMode::SkillRater => {
            let path = scores_dir.join("scores.jsonl");
            let table = ScoreTable::read_jsonl(&path)?;
            let paths: Vec<PathBuf> = (0..table.capabilities)
                .map(|c| raters_dir.join(format!("rater_{c}.json")))
                .collect();
            (Some(table), paths)
        }
        BaselineMode::Monolithic | BaselineMode::Pooled => {
            let name = mode.label();
            let path = scores_dir.join(format!("scores_{name}.jsonl"));
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "{name} mode needs {} (run train-raters with --baselines, then score)",
                    path.display()
                )));
            }
            let table = ScoreTable::read_jsonl(&path)?;
            (Some(table), vec![raters_dir.join(format!("{name}.json"))])
        }
    };

    if let Some(table) = &table {
        verify_provenance(table, &checkpoint_paths)?;
    }

    let log = run_experiment(
        mode,
        &cfg.experiment,
        &corpus,
        &split,
        table.as_ref(),
        &cfg.experiment.large_hidden,
        cfg.curriculum.stages,
        cfg.curriculum.steps_per_stage,
        cfg.seed,
    )?;

    // Raters must come out of the run byte-identical.
    if let Some(table) = &table {
        verify_provenance(table, &checkpoint_paths)?;
    }

    write_text(
        &out.join(format!("metrics_{}.csv", mode.label())),
        &metrics_csv(&[&log]),
    )?;
    write_summary(&log, &out.join(format!("summary_{}.json", mode.label())))?;
    echo_config(cfg, out, &format!("experiment_{}", mode.label()))?;
    Ok(log)
}

/// `experiment --sweep`: static top-k fractions plus the curriculum run,
/// using the capability-0 rater's scores.
pub fn cmd_sweep(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    scores_dir: &Path,
    out: &Path,
) -> Result<Vec<MetricsLog>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let corpus = read_corpus_jsonl(corpus_path)?;
    let split = split_for(cfg, &corpus)?;
    let table = ScoreTable::read_jsonl(&scores_dir.join("scores.jsonl"))?;

    // Single-rater sweep: capability 0's column.
    let single = ScoreTable {
        capabilities: 1,
        rater_hashes: vec![table.rater_hashes.first().cloned().unwrap_or_default()],
        rows: table
            .rows
            .iter()
            .map(|r| crate::score::ScoreRow {
                id: r.id,
                scores: vec![r.scores[0]],
            })
            .collect(),
    };

    let logs = static_topk_sweep(
        &cfg.experiment,
        &corpus,
        &split,
        &single,
        &cfg.static_fractions,
        &cfg.experiment.large_hidden,
        cfg.curriculum.stages,
        cfg.curriculum.steps_per_stage,
        cfg.seed,
    )?;

    let refs: Vec<&MetricsLog> = logs.iter().collect();
    write_text(&out.join("sweep_metrics.csv"), &metrics_csv(&refs))?;
    let mut summary = String::from("mode,overall_mean\n");
    for log in &logs {
        summary.push_str(&format!("{},{}\n", log.mode, fmt6(log.overall_mean)));
    }
    write_text(&out.join("sweep_summary.csv"), &summary)?;
    echo_config(cfg, out, "experiment_sweep")?;
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            seed: 11,
            corpus: crate::corpus::CorpusConfig {
                n_samples: 1200,
                ..Default::default()
            },
            split: crate::corpus::SplitConfig {
                validation_size: 16,
                heldout_size: 64,
                audit_size: 500,
            },
            inner: crate::bilevel::InnerLoopConfig {
                train_microbatches: 4,
                val_microbatches: 4,
                meta_period: 1,
                ..Default::default()
            },
            rater: crate::bilevel::RaterConfig {
                hidden: vec![8],
                ..Default::default()
            },
            meta_iters: 3,
            curriculum: crate::config::CurriculumConfig {
                stages: 4,
                steps_per_stage: 10,
            },
            experiment: crate::experiment::ExperimentConfig {
                seeds: vec![0],
                eval_period: 20,
                small_hidden: vec![8],
                large_hidden: vec![12],
                ..Default::default()
            },
            static_fractions: vec![0.5],
        }
    }

    fn fresh_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("caprater_pipeline_{name}"));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn full_pipeline_smoke() {
        let cfg = quick_config();
        let out = fresh_dir("smoke");
        let corpus = cmd_generate(&cfg, &out).unwrap();
        assert_eq!(corpus.len(), 1200);
        assert!(out.join("corpus.jsonl").exists());
        assert!(out.join("generate_config.json").exists());

        cmd_train_raters(&cfg, &out.join("corpus.jsonl"), &out, false).unwrap();
        for c in 0..3 {
            assert!(out.join("raters").join(format!("rater_{c}.json")).exists());
            assert!(out
                .join("raters")
                .join(format!("train_log_{c}.csv"))
                .exists());
        }

        cmd_score(&cfg, &out.join("corpus.jsonl"), &out.join("raters"), &out).unwrap();
        assert!(out.join("scores.jsonl").exists());

        let (schedule, rendered) = cmd_schedule(&cfg, &out.join("scores.jsonl"), &out).unwrap();
        assert_eq!(schedule.stages.len(), 4);
        assert!(rendered.contains("stage"));
        assert!(out.join("schedule.csv").exists());

        let report = cmd_analyze(&cfg, &out.join("scores.jsonl"), &out).unwrap();
        assert_eq!(report.capabilities, 3);
        assert!(out.join("analysis.json").exists());
        assert!(out.join("score_pairs.csv").exists());

        let log = cmd_experiment(
            &cfg,
            &out.join("corpus.jsonl"),
            &out,
            &out.join("raters"),
            BaselineMode::SkillRater,
            &out,
        )
        .unwrap();
        assert_eq!(log.per_seed.len(), 1);
        assert!(out.join("metrics_skillrater.csv").exists());
        assert!(out.join("summary_skillrater.json").exists());
    }

    #[test]
    fn experiment_rejects_tampered_rater_checkpoints() {
        let cfg = quick_config();
        let out = fresh_dir("tamper");
        cmd_generate(&cfg, &out).unwrap();
        cmd_train_raters(&cfg, &out.join("corpus.jsonl"), &out, false).unwrap();
        cmd_score(&cfg, &out.join("corpus.jsonl"), &out.join("raters"), &out).unwrap();

        // Overwrite one rater checkpoint after scoring.
        let tampered = Rater::new(cfg.corpus.feature_dim, &[8], 0, 0.1, 0.2, 999).unwrap();
        tampered
            .save(&out.join("raters").join("rater_0.json"))
            .unwrap();

        let result = cmd_experiment(
            &cfg,
            &out.join("corpus.jsonl"),
            &out,
            &out.join("raters"),
            BaselineMode::SkillRater,
            &out,
        );
        assert!(matches!(
            result,
            Err(Error::Provenance { capability: 0, .. })
        ));
    }
}
