//! Credible-sample detection over the old embedding bank: per-class centers
//! and squared-distance variances, Gaussian-kernel pseudo-assignments, their
//! entropy, and thresholding.
//!
//! The procedure is one-shot: centers are computed over every sample of a
//! class (outliers included), scores are computed once, and flags are cleared
//! once before training stage 1.

use serde::{Deserialize, Serialize};

use crate::bank::{clear_credible_flags, OldEmbeddingBank};
use crate::error::{CoreError, Result};
use crate::numeric::softmax;

/// Variance floor: the pseudo-assignment divides by the per-class variance,
/// which is exactly zero for singleton classes and equal-distance sets.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// How the per-class kernel bandwidth is derived from the squared-distance
/// set {||e - center_k||^2 : label = k}.
///
/// The written formula divides by "the variance of the distance set", but the
/// symbol used for it is a sigma-hat, so both the literal variance and its
/// square root are defensible readings; the mean of the set is the classical
/// Gaussian-kernel bandwidth. All three are implemented. The variance grows
/// quadratically with an outlier's distance and the other two linearly, which
/// changes how strongly outliers widen their own class's kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelBandwidth {
    /// Variance of the squared-distance set.
    Variance,
    /// Standard deviation of the squared-distance set.
    StdDev,
    /// Mean of the squared-distance set.
    #[default]
    MeanSquaredDistance,
}

/// Per-class centers and kernel bandwidths over the bank.
#[derive(Debug, Clone)]
pub struct ClassStatistics {
    pub centers: Vec<Vec<f64>>,
    /// Kernel bandwidth per class; the `bandwidth` field says which statistic
    /// of the squared-distance set it is.
    pub variances: Vec<f64>,
    pub counts: Vec<usize>,
    pub bandwidth: KernelBandwidth,
}

impl ClassStatistics {
    pub fn class_count(&self) -> usize {
        self.centers.len()
    }
}

/// Soft assignment of one old embedding over the class centers.
#[derive(Debug, Clone)]
pub struct PseudoAssignment(pub Vec<f64>);

/// Outcome of one filter pass over a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub removed_total: usize,
    pub removed_per_class: Vec<usize>,
    pub entropy_min: f64,
    pub entropy_median: f64,
    pub entropy_max: f64,
    /// Classes whose credible entries were all removed; training will skip
    /// those anchors' positives.
    pub emptied_classes: Vec<usize>,
}

/// Centers and kernel bandwidths per class.
///
/// center_k is the mean old embedding of class k; the bandwidth is the chosen
/// statistic of the population squared-distance set around that center,
/// floored at [`VARIANCE_FLOOR`].
pub fn class_stats(
    bank: &OldEmbeddingBank,
    class_count: usize,
    bandwidth: KernelBandwidth,
) -> Result<ClassStatistics> {
    let dim = bank.embedding_dim();
    let mut sums = vec![vec![0.0; dim]; class_count];
    let mut counts = vec![0usize; class_count];
    for e in bank.entries() {
        if e.label >= class_count {
            return Err(CoreError::IndexError(format!(
                "bank label {} outside [0, {class_count})",
                e.label
            )));
        }
        for (s, v) in sums[e.label].iter_mut().zip(e.embedding.iter()) {
            *s += v;
        }
        counts[e.label] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(CoreError::Protocol(format!(
            "class {missing} has no bank entry; every class in [0, {class_count}) needs at least one"
        )));
    }
    let centers: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(counts.iter())
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();

    // population variance of the per-class squared-distance sets
    let mut sq_dists: Vec<Vec<f64>> = vec![Vec::new(); class_count];
    for e in bank.entries() {
        sq_dists[e.label].push(squared_distance(&e.embedding, &centers[e.label]));
    }
    let variances: Vec<f64> = sq_dists
        .into_iter()
        .map(|ds| {
            let n = ds.len() as f64;
            let mean = ds.iter().sum::<f64>() / n;
            let var = ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
            let value = match bandwidth {
                KernelBandwidth::Variance => var,
                KernelBandwidth::StdDev => var.sqrt(),
                KernelBandwidth::MeanSquaredDistance => mean,
            };
            value.max(VARIANCE_FLOOR)
        })
        .collect();

    Ok(ClassStatistics {
        centers,
        variances,
        counts,
        bandwidth,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Gaussian-kernel pseudo-assignment: p_k proportional to
/// exp(-||e - center_k||^2 / variance_k), normalized over classes.
/// Max-subtraction in the exponent keeps distant samples finite.
pub fn pseudo_assignment(stats: &ClassStatistics, old_emb: &[f64]) -> Result<PseudoAssignment> {
    let scores: Vec<f64> = stats
        .centers
        .iter()
        .zip(stats.variances.iter())
        .map(|(c, v)| -squared_distance(old_emb, c) / v)
        .collect();
    Ok(PseudoAssignment(softmax(&scores, 1.0)?))
}

/// Shannon entropy in nats with the 0 log 0 = 0 convention.
pub fn entropy(p: &PseudoAssignment) -> f64 {
    p.0.iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum()
}

/// Clear the credible flag on every entry whose assignment entropy exceeds
/// the threshold; report per-class removals and the entropy spread.
///
/// The threshold may be zero (removes everything with nonzero entropy);
/// negative or non-finite thresholds are rejected.
pub fn apply_filter(
    mut bank: OldEmbeddingBank,
    stats: &ClassStatistics,
    threshold: f64,
) -> Result<(OldEmbeddingBank, FilterReport)> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(CoreError::invalid_parameter(
            "threshold",
            format!("entropy threshold must be finite and non-negative, got {threshold}"),
        ));
    }
    let class_count = stats.class_count();
    let mut entropies = Vec::with_capacity(bank.len());
    let mut removed_ids = Vec::new();
    let mut removed_per_class = vec![0usize; class_count];
    for e in bank.entries() {
        let h = entropy(&pseudo_assignment(stats, &e.embedding)?);
        entropies.push(h);
        if h > threshold {
            removed_ids.push(e.id);
            removed_per_class[e.label] += 1;
        }
    }
    clear_credible_flags(&mut bank, &removed_ids);

    let mut emptied_classes = Vec::new();
    for label in 0..class_count {
        let credible = bank
            .entries()
            .iter()
            .any(|e| e.label == label && e.credible);
        if !credible {
            emptied_classes.push(label);
        }
    }

    let mut sorted = entropies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let report = FilterReport {
        threshold,
        removed_total: removed_ids.len(),
        removed_per_class,
        entropy_min: sorted.first().cloned().unwrap_or(0.0),
        entropy_median: median,
        entropy_max: sorted.last().cloned().unwrap_or(0.0),
        emptied_classes,
    };
    Ok((bank, report))
}
