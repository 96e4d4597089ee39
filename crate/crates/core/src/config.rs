//! Run configuration: every tunable in one serializable struct, echoed to
//! disk on each run so any output can be reproduced from its echo file.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::bilevel::{InnerLoopConfig, RaterConfig};
use crate::corpus::{CorpusConfig, SplitConfig};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;

/// Curriculum shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub stages: usize,
    pub steps_per_stage: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            stages: 10,
            steps_per_stage: 100,
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Global seed; every phase derives its own stream from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub rater: RaterConfig,
    pub inner: InnerLoopConfig,
    /// Outer iterations per rater training run.
    pub meta_iters: usize,
    pub curriculum: CurriculumConfig,
    pub experiment: ExperimentConfig,
    /// Fractions for the static top-k sweep.
    pub static_fractions: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            rater: RaterConfig::default(),
            inner: InnerLoopConfig::default(),
            meta_iters: 4800,
            curriculum: CurriculumConfig::default(),
            experiment: ExperimentConfig::default(),
            static_fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.inner.validate()?;
        self.experiment.validate()?;
        if self.curriculum.stages == 0 {
            return Err(Error::InvalidConfig("stages must be >= 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the config echo for a run.
    pub fn write_echo(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("config serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
