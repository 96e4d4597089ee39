//! Command-line driver for the curation pipeline.
//!
//! The usual flow is
//!
//! ```text
//! caprater generate --out run
//! caprater train-raters --out run
//! caprater score --out run
//! caprater schedule --out run
//! caprater analyze --out run
//! caprater experiment --out run --mode skillrater
//! ```
//!
//! Every subcommand echoes the full configuration into the run directory;
//! re-running from the echo file reproduces the outputs byte-for-byte.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use caprater::config::PipelineConfig;
use caprater::experiment::BaselineMode;
use caprater::pipeline;

#[derive(Parser)]
#[command(
    name = "caprater",
    version,
    about = "Capability-aligned data curation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (JSON); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// Run directory for inputs and outputs.
    #[arg(long, default_value = "run")]
    out: PathBuf,

    /// Number of capabilities; overrides the config file.
    #[arg(long)]
    capabilities: Option<usize>,

    /// Curriculum stages; overrides the config file.
    #[arg(long)]
    stages: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(capabilities) = self.capabilities {
            cfg.corpus.capabilities = capabilities;
        }
        if let Some(stages) = self.stages {
            cfg.curriculum.stages = stages;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-capability corpus.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one rater per capability by bilevel meta-learning.
    TrainRaters {
        #[command(flatten)]
        common: CommonArgs,
        /// Corpus file; defaults to <out>/corpus.jsonl.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Also train the monolithic and pooled baseline raters.
        #[arg(long)]
        baselines: bool,
    },
    /// Score every corpus sample with the trained raters.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Rater checkpoint directory; defaults to <out>/raters.
        #[arg(long)]
        raters: Option<PathBuf>,
    },
    /// Build and print the curriculum schedule.
    Schedule {
        #[command(flatten)]
        common: CommonArgs,
        /// Score table; defaults to <out>/scores.jsonl.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Correlation matrices, PCA variance ratios, effective dimensionality.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Filtered-training experiment for one mode, or the static sweep.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory holding the score tables; defaults to <out>.
        #[arg(long)]
        scores_dir: Option<PathBuf>,
        /// Rater checkpoint directory; defaults to <out>/raters.
        #[arg(long)]
        raters: Option<PathBuf>,
        /// unfiltered | monolithic | pooled | skillrater
        #[arg(long, default_value = "skillrater")]
        mode: String,
        /// Run the static top-k sweep plus the curriculum run instead.
        #[arg(long)]
        sweep: bool,
    },
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common } => {
            let cfg = common.load()?;
            let corpus = pipeline::cmd_generate(&cfg, &common.out)?;
            println!(
                "wrote {} samples ({} capabilities, feature dim {}) to {}",
                corpus.len(),
                corpus.capabilities,
                corpus.feature_dim,
                common.out.join("corpus.jsonl").display()
            );
        }
        Command::TrainRaters {
            common,
            corpus,
            baselines,
        } => {
            let cfg = common.load()?;
            let corpus_path = corpus.unwrap_or_else(|| common.out.join("corpus.jsonl"));
            require(&corpus_path, "corpus; run `caprater generate` first")?;
            let outputs = pipeline::cmd_train_raters(&cfg, &corpus_path, &common.out, baselines)?;
            for output in &outputs {
                let last = output.log.last();
                println!(
                    "rater {} trained: final validation loss {}",
                    output.rater.capability_id(),
                    last.map_or("n/a".to_string(), |r| format!("{:.6}", r.val_loss)),
                );
            }
            println!(
                "checkpoints and training logs in {}",
                common.out.join("raters").display()
            );
        }
        Command::Score {
            common,
            corpus,
            raters,
        } => {
            let cfg = common.load()?;
            let corpus_path = corpus.unwrap_or_else(|| common.out.join("corpus.jsonl"));
            let raters_dir = raters.unwrap_or_else(|| common.out.join("raters"));
            require(&corpus_path, "corpus; run `caprater generate` first")?;
            require(
                &raters_dir,
                "rater checkpoints; run `caprater train-raters` first",
            )?;
            let table = pipeline::cmd_score(&cfg, &corpus_path, &raters_dir, &common.out)?;
            println!(
                "scored {} samples with {} raters -> {}",
                table.len(),
                table.capabilities,
                common.out.join("scores.jsonl").display()
            );
        }
        Command::Schedule { common, scores } => {
            let cfg = common.load()?;
            let scores_path = scores.unwrap_or_else(|| common.out.join("scores.jsonl"));
            require(&scores_path, "score table; run `caprater score` first")?;
            let (_, rendered) = pipeline::cmd_schedule(&cfg, &scores_path, &common.out)?;
            print!("{rendered}");
            println!(
                "schedule written to {}",
                common.out.join("schedule.csv").display()
            );
        }
        Command::Analyze { common, scores } => {
            let cfg = common.load()?;
            let scores_path = scores.unwrap_or_else(|| common.out.join("scores.jsonl"));
            require(&scores_path, "score table; run `caprater score` first")?;
            let report = pipeline::cmd_analyze(&cfg, &scores_path, &common.out)?;
            println!(
                "mean |pearson| off-diagonal: {:.6}",
                report.mean_abs_offdiag
            );
            println!(
                "variance ratios: [{}]",
                report
                    .variance_ratios
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "effective dimensionality: {:.6} of {}",
                report.effective_dim, report.capabilities
            );
            println!(
                "report: {}; scatter data: {}",
                common.out.join("analysis.json").display(),
                common.out.join("score_pairs.csv").display()
            );
        }
        Command::Experiment {
            common,
            corpus,
            scores_dir,
            raters,
            mode,
            sweep,
        } => {
            let cfg = common.load()?;
            let corpus_path = corpus.unwrap_or_else(|| common.out.join("corpus.jsonl"));
            require(&corpus_path, "corpus; run `caprater generate` first")?;
            let scores_dir = scores_dir.unwrap_or_else(|| common.out.clone());
            if sweep {
                let logs = pipeline::cmd_sweep(&cfg, &corpus_path, &scores_dir, &common.out)?;
                println!("{:<14} {:>12}", "run", "overall loss");
                for log in &logs {
                    println!("{:<14} {:>12.6}", log.mode, log.overall_mean);
                }
                println!(
                    "metrics in {}",
                    common.out.join("sweep_metrics.csv").display()
                );
            } else {
                let mode: BaselineMode = mode.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
                let raters_dir = raters.unwrap_or_else(|| common.out.join("raters"));
                let log = pipeline::cmd_experiment(
                    &cfg,
                    &corpus_path,
                    &scores_dir,
                    &raters_dir,
                    mode,
                    &common.out,
                )?;
                println!(
                    "mode {}: overall held-out loss {:.6}",
                    log.mode, log.overall_mean
                );
                for (c, loss) in log.per_capability_mean.iter().enumerate() {
                    println!("  capability {c}: {loss:.6}");
                }
                println!(
                    "metrics in {}",
                    common
                        .out
                        .join(format!("metrics_{}.csv", log.mode))
                        .display()
                );
            }
        }
    }
    Ok(())
}

fn require(path: &std::path::Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}: expected {what}", path.display());
    }
    Ok(())
}
