//! Orthogonality analytics over rater score tables: correlation matrices,
//! PCA variance ratios, and effective dimensionality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::ScoreTable;

/// Full orthogonality report for a C-rater score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub capabilities: usize,
    pub pearson: Vec<Vec<f64>>,
    pub spearman: Vec<Vec<f64>>,
    /// Mean |r| over the off-diagonal of the Pearson matrix.
    pub mean_abs_offdiag: f64,
    /// Mean |rho| over the off-diagonal of the Spearman matrix.
    pub spearman_mean_abs_offdiag: f64,
    /// PCA variance ratios of the z-scored score columns, descending,
    /// summing to 1.
    pub variance_ratios: Vec<f64>,
    /// Participation ratio 1 / sum(p_i^2) over the variance ratios.
    pub effective_dim: f64,
    /// Alternative entropy-based effective dimensionality exp(-sum p ln p).
    pub effective_dim_entropy: f64,
}

/// Pairwise Pearson correlation of two equally long columns.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "column lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 samples".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateColumn {
            rater: if sxx == 0.0 { 0 } else { 1 },
        });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&rank_data(x), &rank_data(y))
}

/// Average-rank transform, 1-based; ties get the mean of their rank span.
pub fn rank_data(data: &[f64]) -> Vec<f64> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data[a].partial_cmp(&data[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && data[order[j]] == data[order[i]] {
            j += 1;
        }
        // Mean of 1-based ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn columns_of(table: &ScoreTable) -> Vec<Vec<f64>> {
    (0..table.capabilities).map(|c| table.column(c)).collect()
}

fn check_table(table: &ScoreTable) -> Result<()> {
    if table.rows.len() < 2 {
        return Err(Error::InvalidArgument(
            "score table needs at least 2 samples".into(),
        ));
    }
    Ok(())
}

fn correlation_matrix(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let c = columns.len();
    // Zero-variance columns are reported against their own rater index.
    for (i, col) in columns.iter().enumerate() {
        let m = col.iter().sum::<f64>() / col.len() as f64;
        if col.iter().all(|v| *v == m) {
            return Err(Error::DegenerateColumn { rater: i });
        }
    }
    let mut matrix = vec![vec![0.0; c]; c];
    for i in 0..c {
        matrix[i][i] = 1.0;
        for j in (i + 1)..c {
            let r = pearson(&columns[i], &columns[j])?;
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(matrix)
}

/// C x C Pearson correlation matrix of the rater score columns.
pub fn pearson_matrix(table: &ScoreTable) -> Result<Vec<Vec<f64>>> {
    check_table(table)?;
    correlation_matrix(&columns_of(table))
}

/// C x C Spearman matrix: Pearson on average-ranked columns.
pub fn spearman_matrix(table: &ScoreTable) -> Result<Vec<Vec<f64>>> {
    check_table(table)?;
    let ranked: Vec<Vec<f64>> = columns_of(table).iter().map(|c| rank_data(c)).collect();
    correlation_matrix(&ranked)
}

/// Mean absolute value over the off-diagonal entries; 0 for a 1x1 matrix.
pub fn mean_abs_offdiag(matrix: &[Vec<f64>]) -> f64 {
    let c = matrix.len();
    if c < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                total += v.abs();
            }
        }
    }
    total / (c * (c - 1)) as f64
}

/// Eigenvalues of the covariance of z-scored columns (which is the Pearson
/// correlation matrix), sorted descending and normalized to sum 1.
pub fn pca_variance_ratios(table: &ScoreTable) -> Result<Vec<f64>> {
    if table.rows.len() < table.capabilities + 1 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least C+1 = {} samples, got {}",
            table.capabilities + 1,
            table.rows.len()
        )));
    }
    let matrix = correlation_matrix(&columns_of(table))?;
    let mut eigenvalues = symmetric_eigenvalues(matrix);
    // Clamp the tiny negatives a rank-deficient matrix can produce.
    for v in eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "correlation matrix has no positive eigenvalues".into(),
        ));
    }
    Ok(eigenvalues.into_iter().map(|v| v / total).collect())
}

/// Participation ratio `1 / sum(p_i^2)` over a simplex vector of variance
/// ratios; ranges from 1 (degenerate) to C (uniform).
pub fn effective_dimensionality(variance_ratios: &[f64]) -> Result<f64> {
    check_simplex(variance_ratios)?;
    let sum: f64 = variance_ratios.iter().sum();
    let sum_sq: f64 = variance_ratios.iter().map(|p| p * p).sum();
    // (sum p)^2 / sum p^2: scale-invariant form, exact at the uniform and
    // degenerate corners.
    Ok(sum * sum / sum_sq)
}

/// Entropy-based alternative: `exp(-sum p ln p)`.
pub fn effective_dimensionality_entropy(variance_ratios: &[f64]) -> Result<f64> {
    check_simplex(variance_ratios)?;
    let h: f64 = variance_ratios
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(h.exp())
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty variance ratios".into()));
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "variance ratios must be nonnegative and finite".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "variance ratios must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// Assembles the full report.
pub fn orthogonality_report(table: &ScoreTable) -> Result<AnalysisReport> {
    let pearson = pearson_matrix(table)?;
    let spearman = spearman_matrix(table)?;
    let variance_ratios = pca_variance_ratios(table)?;
    let effective_dim = effective_dimensionality(&variance_ratios)?;
    let effective_dim_entropy = effective_dimensionality_entropy(&variance_ratios)?;
    Ok(AnalysisReport {
        capabilities: table.capabilities,
        mean_abs_offdiag: mean_abs_offdiag(&pearson),
        spearman_mean_abs_offdiag: mean_abs_offdiag(&spearman),
        pearson,
        spearman,
        variance_ratios,
        effective_dim,
        effective_dim_entropy,
    })
}

/// Jacobi eigenvalue iteration for a small symmetric matrix.
#[allow(clippy::needless_range_loop)]
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    if n == 1 {
        return vec![a[0][0]];
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}
