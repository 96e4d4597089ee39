//! Synthetic multi-capability corpus with planted per-capability utilities.
//!
//! Each non-noise sample draws independent utilities `u_c ~ U(0,1)` and
//! encodes every `u_c` into a dedicated feature block through a fixed random
//! projection followed by `tanh`, so each utility is learnable from features
//! alone. The capability-c regression target is `u_c` plus Gaussian label
//! noise with standard deviation `sigma_max * (1 - u_c)`: high-utility
//! samples carry cleaner capability-c signal, and `u_c = 0` means no signal
//! at all. Noise samples carry no signal for any capability.
//!
//! Encodings and targets are deliberately uncentered. With centered targets
//! and odd feature channels, the sample at utility `u` and the one at
//! `1 - u` produce identical gradients on an odd model, which makes the two
//! ends of the utility scale indistinguishable to gradient-alignment
//! methods.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    /// Regression target per capability.
    pub targets: Vec<f64>,
    /// Hidden ground truth per capability; used only by oracles and splits,
    /// never shown to raters.
    pub planted_utility: Vec<f64>,
    /// True when the sample is pure noise for every capability.
    pub noise_flag: bool,
}

/// Generation parameters for the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_samples: usize,
    pub capabilities: usize,
    pub feature_dim: usize,
    /// Fraction of samples that are pure noise for every capability.
    pub noise_fraction: f64,
    /// Label-noise scale; capability-c noise std is `sigma_max * (1 - u_c)`.
    pub sigma_max: f64,
    /// Std of the additive feature noise on the utility-encoding blocks.
    pub feature_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_samples: 16_000,
            capabilities: 3,
            feature_dim: 16,
            noise_fraction: 0.05,
            sigma_max: 0.8,
            feature_noise: 0.1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capabilities == 0 {
            return Err(Error::InvalidArgument("capabilities must be >= 1".into()));
        }
        if self.n_samples < self.capabilities * 100 {
            return Err(Error::InvalidArgument(format!(
                "need at least {} samples for {} capabilities, got {}",
                self.capabilities * 100,
                self.capabilities,
                self.n_samples
            )));
        }
        if self.feature_dim < self.capabilities {
            return Err(Error::InvalidArgument(format!(
                "feature_dim {} too small for {} capability blocks",
                self.feature_dim, self.capabilities
            )));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::InvalidArgument(format!(
                "noise_fraction must be in [0, 1), got {}",
                self.noise_fraction
            )));
        }
        if self.sigma_max < 0.0 || self.feature_noise < 0.0 {
            return Err(Error::InvalidArgument(
                "noise scales must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// An immutable generated corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub capabilities: usize,
    pub feature_dim: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// id -> index lookup.
    pub fn index_by_id(&self) -> HashMap<u64, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect()
    }

    pub fn samples_by_ids(&self, ids: &[u64]) -> Result<Vec<Sample>> {
        let index = self.index_by_id();
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|&i| self.samples[i].clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown sample id {id}")))
            })
            .collect()
    }
}

/// Per-capability pool: validation ids drive the capability's meta-objective,
/// held-out ids are reserved for final evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityPool {
    pub capability_id: usize,
    pub validation_ids: Vec<u64>,
    pub heldout_ids: Vec<u64>,
}

/// Disjoint partition of a corpus into train pool, per-capability validation
/// pools, and per-capability held-out evaluation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub pools: Vec<CapabilityPool>,
    pub train_ids: Vec<u64>,
    /// Unbiased full-range sample for rank oracles; never trained on.
    pub audit_ids: Vec<u64>,
}

/// Generates the corpus deterministically from `seed`.
pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "corpus"));
    let c = cfg.capabilities;
    let block = cfg.feature_dim / c;

    // Fixed per-corpus channel parameters: one random projection per
    // capability block, drawn once before any sample. Signs alternate by
    // coordinate and magnitudes stay in tanh's well-conditioned range so no
    // channel loses resolution at either end of the utility scale. Each
    // coordinate is centered to zero mean over u ~ U(0,1); uncentered
    // channels hand every rater the same mean-feature direction, which
    // surfaces as cross-rater score correlation.
    let mut channel_w = vec![vec![0.0; block]; c];
    let mut channel_b = vec![vec![0.0; block]; c];
    let mut channel_mean = vec![vec![0.0; block]; c];
    for cap in 0..c {
        for j in 0..block {
            let magnitude: f64 = rng.random_range(0.6..1.4);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let w = sign * magnitude;
            let b: f64 = rng.random_range(-0.3..0.3);
            channel_w[cap][j] = w;
            channel_b[cap][j] = b;
            // Closed form of the mean of tanh(w*u + b) over u in [0,1].
            channel_mean[cap][j] = ((w + b).cosh().ln() - b.cosh().ln()) / w;
        }
    }

    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let feat_noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE)).expect("normal");

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for id in 0..cfg.n_samples as u64 {
        let noise_flag = cfg.noise_fraction > 0.0 && rng.random::<f64>() < cfg.noise_fraction;
        let mut features = vec![0.0; cfg.feature_dim];
        let mut targets = vec![0.0; c];
        let mut utility = vec![0.0; c];

        if noise_flag {
            // Look-alike junk: features mimic a real sample (a fake utility
            // vector pushed through the same channels) so the junk labels
            // bias the learned conditional mean on the data manifold, the
            // way mislabeled real-looking samples do. Targets carry no
            // signal, and the planted utility is zero for every capability.
            for cap in 0..c {
                let fake_u: f64 = rng.random::<f64>();
                for j in 0..block {
                    features[cap * block + j] = (channel_w[cap][j] * fake_u + channel_b[cap][j])
                        .tanh()
                        - channel_mean[cap][j]
                        + feat_noise.sample(&mut rng);
                }
            }
            for f in features.iter_mut().skip(c * block) {
                *f = feat_noise.sample(&mut rng);
            }
            // Junk labels sit systematically below the real target range;
            // garbage labels are off-distribution, not centered on the
            // truth. Zero information about any capability either way.
            for t in targets.iter_mut() {
                *t = -0.5 + unit_normal.sample(&mut rng) * 0.5 * cfg.sigma_max;
            }
        } else {
            for u in utility.iter_mut() {
                *u = rng.random::<f64>();
            }
            for (cap, u) in utility.iter().enumerate() {
                for j in 0..block {
                    let eps = if cfg.feature_noise > 0.0 {
                        feat_noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    features[cap * block + j] = (channel_w[cap][j] * u + channel_b[cap][j]).tanh()
                        - channel_mean[cap][j]
                        + eps;
                }
            }
            // Leftover coordinates carry no signal. They stay at the
            // feature-noise scale: a high-variance dead coordinate feeds
            // every rater the same spurious score component, which shows up
            // directly as cross-rater correlation.
            for f in features.iter_mut().skip(c * block) {
                *f = feat_noise.sample(&mut rng);
            }
            for (cap, u) in utility.iter().enumerate() {
                let sigma = cfg.sigma_max * (1.0 - u);
                let xi = if sigma > 0.0 {
                    unit_normal.sample(&mut rng) * sigma
                } else {
                    0.0
                };
                targets[cap] = u + xi;
            }
        }

        samples.push(Sample {
            id,
            features,
            targets,
            planted_utility: utility,
            noise_flag,
        });
    }

    Ok(Corpus {
        samples,
        capabilities: c,
        feature_dim: cfg.feature_dim,
    })
}

/// Split sizing for validation pools and held-out evaluation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Validation samples per capability.
    pub validation_size: usize,
    /// Held-out evaluation samples per capability.
    pub heldout_size: usize,
    /// Unbiased audit samples kept out of everything; rank oracles need a
    /// full-range utility sample, which the capability-aligned held-out
    /// splits deliberately are not.
    pub audit_size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            validation_size: 256,
            heldout_size: 2000,
            audit_size: 2000,
        }
    }
}

/// Planted-utility floor for validation pool membership. High enough that
/// validation labels are nearly clean, the way curated benchmarks are.
const VALIDATION_UTILITY_FLOOR: f64 = 0.9;

/// Builds `C` pairwise-disjoint validation pools biased toward high planted
/// utility for their capability, `C` disjoint held-out evaluation splits,
/// and one unbiased audit split; everything left over is the train pool.
///
/// Validation pools draw randomly from the samples above a utility floor
/// rather than taking the extreme top: a pool spread over the high-utility
/// band produces a broader validation gradient than one pinned to the
/// utility-1 corner.
pub fn make_validation_pools(
    corpus: &Corpus,
    split: &SplitConfig,
    seed: u64,
) -> Result<CorpusSplit> {
    let c = corpus.capabilities;
    if split.validation_size == 0 {
        return Err(Error::InvalidArgument(
            "validation_size must be positive".into(),
        ));
    }
    let needed = c * (split.validation_size + split.heldout_size) + split.audit_size;
    if corpus.len() <= needed {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} samples cannot supply {} disjoint validation/held-out/audit samples plus a train pool",
            corpus.len(),
            needed
        )));
    }

    let mut claimed = vec![false; corpus.len()];
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "validation-pools"));

    let claim_banded = |claimed: &mut Vec<bool>,
                        rng: &mut ChaCha12Rng,
                        cap: usize,
                        floor: f64,
                        count: usize,
                        what: &str|
     -> Result<Vec<u64>> {
        let mut candidates: Vec<usize> = (0..corpus.len())
            .filter(|&i| {
                !claimed[i]
                    && !corpus.samples[i].noise_flag
                    && corpus.samples[i].planted_utility[cap] >= floor
            })
            .collect();
        if candidates.len() < count {
            return Err(Error::InvalidArgument(format!(
                "only {} candidates above the utility floor for {what} {cap}, need {count}",
                candidates.len()
            )));
        }
        for i in (1..candidates.len()).rev() {
            let j = rng.random_range(0..=i);
            candidates.swap(i, j);
        }
        candidates.truncate(count);
        for &idx in &candidates {
            claimed[idx] = true;
        }
        Ok(candidates.iter().map(|&i| corpus.samples[i].id).collect())
    };

    let mut validation: Vec<Vec<u64>> = Vec::with_capacity(c);
    for cap in 0..c {
        validation.push(claim_banded(
            &mut claimed,
            &mut rng,
            cap,
            VALIDATION_UTILITY_FLOOR,
            split.validation_size,
            "validation pool",
        )?);
    }
    // Unbiased held-out splits and audit split from the unclaimed remainder.
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "splits"));
    let mut remaining: Vec<usize> = (0..corpus.len()).filter(|&i| !claimed[i]).collect();
    // Fisher-Yates over the remainder.
    for i in (1..remaining.len()).rev() {
        let j = rng.random_range(0..=i);
        remaining.swap(i, j);
    }
    let mut take = 0usize;
    let mut heldout: Vec<Vec<u64>> = Vec::with_capacity(c);
    for _cap in 0..c {
        let mut ids = Vec::with_capacity(split.heldout_size);
        for _ in 0..split.heldout_size {
            let idx = remaining[take];
            take += 1;
            claimed[idx] = true;
            ids.push(corpus.samples[idx].id);
        }
        heldout.push(ids);
    }
    let mut audit_ids = Vec::with_capacity(split.audit_size);
    for _ in 0..split.audit_size {
        let idx = remaining[take];
        take += 1;
        claimed[idx] = true;
        audit_ids.push(corpus.samples[idx].id);
    }

    let train_ids: Vec<u64> = (0..corpus.len())
        .filter(|&i| !claimed[i])
        .map(|i| corpus.samples[i].id)
        .collect();
    if train_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "no samples left for the train pool".into(),
        ));
    }

    let pools = (0..c)
        .map(|cap| CapabilityPool {
            capability_id: cap,
            validation_ids: std::mem::take(&mut validation[cap]),
            heldout_ids: std::mem::take(&mut heldout[cap]),
        })
        .collect();

    Ok(CorpusSplit {
        pools,
        train_ids,
        audit_ids,
    })
}

/// Writes the corpus as JSONL, one sample per line.
pub fn write_corpus_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(corpus.len() * 256);
    for sample in &corpus.samples {
        serde_json::to_writer(&mut buf, sample)
            .map_err(|e| Error::InvalidConfig(format!("corpus serialization failed: {e}")))?;
        buf.push(b'\n');
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a corpus back; parse errors name the offending line.
pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut samples: Vec<Sample> = Vec::new();
    let mut capabilities = 0usize;
    let mut feature_dim = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if samples.is_empty() {
            capabilities = sample.targets.len();
            feature_dim = sample.features.len();
            if capabilities == 0 || feature_dim == 0 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "sample has empty targets or features".to_string(),
                });
            }
        } else if sample.targets.len() != capabilities
            || sample.features.len() != feature_dim
            || sample.planted_utility.len() != capabilities
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!(
                    "inconsistent dimensions: features {}, targets {}, utilities {}",
                    sample.features.len(),
                    sample.targets.len(),
                    sample.planted_utility.len()
                ),
            });
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "corpus file is empty".to_string(),
        });
    }
    let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "duplicate sample ids".to_string(),
        });
    }
    Ok(Corpus {
        samples,
        capabilities,
        feature_dim,
    })
}
