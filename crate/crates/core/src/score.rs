//! Corpus-wide score tables: one score per sample per rater, persisted as
//! JSONL with rater checkpoint hashes for provenance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rater::Rater;

/// Scores of one sample under all C raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: u64,
    pub scores: Vec<f64>,
}

/// Per-sample scores from C raters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub capabilities: usize,
    /// sha256 of each rater's checkpoint file, for provenance.
    pub rater_hashes: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreHeader {
    capabilities: usize,
    rater_hashes: Vec<String>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All scores of rater `c`, in row order.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[c]).collect()
    }

    /// Checks arity, score domain, and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidArgument("score table is empty".into()));
        }
        for row in &self.rows {
            if row.scores.len() != self.capabilities {
                return Err(Error::InputShape {
                    expected: self.capabilities,
                    got: row.scores.len(),
                });
            }
            for &s in &row.scores {
                if !(s > 0.0 && s < 1.0) {
                    return Err(Error::ScoreDomain { value: s });
                }
            }
        }
        let mut ids: Vec<u64> = self.rows.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "duplicate sample ids in score table".into(),
            ));
        }
        Ok(())
    }

    /// Checks the table covers exactly the corpus's samples.
    pub fn validate_against_corpus(&self, corpus: &Corpus) -> Result<()> {
        self.validate()?;
        if self.rows.len() != corpus.len() {
            return Err(Error::InvalidArgument(format!(
                "score table has {} rows for a corpus of {} samples",
                self.rows.len(),
                corpus.len()
            )));
        }
        let mut table_ids: Vec<u64> = self.rows.iter().map(|r| r.id).collect();
        table_ids.sort_unstable();
        let mut corpus_ids: Vec<u64> = corpus.samples.iter().map(|s| s.id).collect();
        corpus_ids.sort_unstable();
        if table_ids != corpus_ids {
            return Err(Error::InvalidArgument(
                "score table ids do not match corpus ids".into(),
            ));
        }
        Ok(())
    }

    /// JSONL: a header line with capabilities and rater hashes, then one row
    /// per line in corpus order.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.rows.len() * 96 + 256);
        let header = ScoreHeader {
            capabilities: self.capabilities,
            rater_hashes: self.rater_hashes.clone(),
        };
        serde_json::to_writer(&mut buf, &header)
            .map_err(|e| Error::InvalidConfig(format!("score header serialization: {e}")))?;
        buf.push(b'\n');
        for row in &self.rows {
            serde_json::to_writer(&mut buf, row)
                .map_err(|e| Error::InvalidConfig(format!("score row serialization: {e}")))?;
            buf.push(b'\n');
        }
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_jsonl(path: &Path) -> Result<ScoreTable> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();

        let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "missing header line".to_string(),
        })?;
        let header_line = header_line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let header: ScoreHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: e.to_string(),
        })?;

        let mut rows = Vec::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ScoreRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            if row.scores.len() != header.capabilities {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!(
                        "row has {} scores, header says {}",
                        row.scores.len(),
                        header.capabilities
                    ),
                });
            }
            rows.push(row);
        }
        Ok(ScoreTable {
            capabilities: header.capabilities,
            rater_hashes: header.rater_hashes,
            rows,
        })
    }
}

/// Scores every corpus sample under every rater. Row order follows the
/// corpus; the per-sample map is parallel but ordered, so output is
/// deterministic regardless of thread count.
pub fn score_corpus(
    corpus: &Corpus,
    raters: &[Rater],
    rater_hashes: Vec<String>,
) -> Result<ScoreTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot score an empty corpus".into(),
        ));
    }
    if raters.is_empty() {
        return Err(Error::InvalidConfig("no raters supplied".into()));
    }
    if rater_hashes.len() != raters.len() {
        return Err(Error::InvalidConfig(format!(
            "{} hashes for {} raters",
            rater_hashes.len(),
            raters.len()
        )));
    }
    for rater in raters {
        if rater.input_dim() != corpus.feature_dim {
            return Err(Error::InputShape {
                expected: rater.input_dim(),
                got: corpus.feature_dim,
            });
        }
    }
    let rows: Result<Vec<ScoreRow>> = corpus
        .samples
        .par_iter()
        .map(|sample| {
            let scores: Result<Vec<f64>> =
                raters.iter().map(|r| r.score(&sample.features)).collect();
            Ok(ScoreRow {
                id: sample.id,
                scores: scores?,
            })
        })
        .collect();
    Ok(ScoreTable {
        capabilities: raters.len(),
        rater_hashes,
        rows: rows?,
    })
}

/// sha256 of a file's bytes, hex-encoded.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Verifies that the rater checkpoints at `paths` still hash to the values
/// recorded in the table.
pub fn verify_provenance(table: &ScoreTable, paths: &[std::path::PathBuf]) -> Result<()> {
    if paths.len() != table.rater_hashes.len() {
        return Err(Error::InvalidConfig(format!(
            "{} checkpoint paths for {} recorded hashes",
            paths.len(),
            table.rater_hashes.len()
        )));
    }
    for (capability, (path, expected)) in paths.iter().zip(&table.rater_hashes).enumerate() {
        let found = sha256_file(path)?;
        if &found != expected {
            return Err(Error::Provenance {
                capability,
                expected: expected.clone(),
                found,
            });
        }
    }
    Ok(())
}
