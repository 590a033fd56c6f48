//! Loss terms for backward-compatible training and their analytic gradients:
//! the cosine consensus weight, the weighted soft contrastive loss on the
//! embedding space, its dual on the discriminative (logit) space, softmax
//! cross-entropy, the combined objective, and the plain regression baseline.
//!
//! Normalization policy: when enabled in the training config, embeddings are
//! L2-normalized before the inner products of the affinity softmax. The
//! consensus weight is cosine-based and therefore scale-invariant either way.
//! Logits on the discriminative space are always used as-is.

use crate::error::{CoreError, Result};
use crate::numeric::{dot, norm, softmax};

/// A scalar loss value together with the gradient at its anchor input.
#[derive(Debug, Clone)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
}

/// Soft neighborhood consensus weight: (cos(a, b) + 1) / 2, in [0, 1].
///
/// Computed from old embeddings only and treated as a constant during
/// training; no gradient flows through it.
pub fn consensus_weight(old_i: &[f64], old_p: &[f64]) -> Result<f64> {
    let ni = norm(old_i);
    let np = norm(old_p);
    if ni == 0.0 || np == 0.0 {
        return Err(CoreError::DegenerateInput(
            "consensus weight of a zero vector".into(),
        ));
    }
    let cos = dot(old_i, old_p)? / (ni * np);
    Ok(((cos + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Affinity distribution of an anchor over a candidate set: temperature
/// softmax of the inner products anchor . candidate / tau.
pub fn affinity_scores(anchor: &[f64], candidates: &[&[f64]], tau: f64) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(CoreError::EmptySet("affinity over no candidates".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        scores.push(dot(anchor, c)?);
    }
    softmax(&scores, tau)
}

/// Shared core of the two soft contrastive losses.
///
/// value = sum_p -w_p log s_p over the positives, with s the affinity
/// distribution over all candidates; gradient with respect to the anchor is
/// (1/tau) sum_p w_p (sum_a s_a c_a - c_p).
fn weighted_soft_contrastive(
    anchor: &[f64],
    positive_idx: &[usize],
    candidates: &[&[f64]],
    weights: &[f64],
    tau: f64,
) -> Result<Option<LossWithGrad>> {
    if !(tau > 0.0) {
        return Err(CoreError::invalid_parameter(
            "tau",
            format!("temperature must be positive, got {tau}"),
        ));
    }
    if positive_idx.is_empty() {
        // skip signal: this anchor contributes nothing and is counted upstream
        return Ok(None);
    }
    if positive_idx.len() != weights.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} positives but {} weights",
            positive_idx.len(),
            weights.len()
        )));
    }
    if let Some(&bad) = positive_idx.iter().find(|&&p| p >= candidates.len()) {
        return Err(CoreError::IndexError(format!(
            "positive index {bad} out of {} candidates",
            candidates.len()
        )));
    }
    // log-space evaluation: log s_p = z_p - logsumexp(z) stays finite even
    // when a positive's softmax entry underflows to zero
    let mut scaled = Vec::with_capacity(candidates.len());
    for c in candidates {
        scaled.push(dot(anchor, c)? / tau);
    }
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = scaled.iter().map(|z| (z - max).exp()).sum();
    let log_sum_exp = sum_exp.ln() + max;
    let s: Vec<f64> = scaled.iter().map(|z| (z - max).exp() / sum_exp).collect();

    let mut value = 0.0;
    // weighted expectation over the candidate set: sum_a s_a c_a, scaled by
    // the total positive weight
    let dim = anchor.len();
    let mut grad = vec![0.0; dim];
    let mut weight_sum = 0.0;
    for (&p, &w) in positive_idx.iter().zip(weights.iter()) {
        value -= w * (scaled[p] - log_sum_exp);
        weight_sum += w;
        for (g, c) in grad.iter_mut().zip(candidates[p].iter()) {
            *g -= w * c;
        }
    }
    for (a, sa) in s.iter().enumerate() {
        let coeff = weight_sum * sa;
        for (g, c) in grad.iter_mut().zip(candidates[a].iter()) {
            *g += coeff * c;
        }
    }
    for g in grad.iter_mut() {
        *g /= tau;
    }
    if !value.is_finite() {
        return Err(CoreError::Numeric(
            "soft contrastive loss is non-finite".into(),
        ));
    }
    Ok(Some(LossWithGrad {
        value,
        grad_anchor: grad,
    }))
}

/// Weighted soft contrastive loss on the embedding space.
///
/// `candidates` are the (policy-normalized, dimension-aligned) old embeddings
/// of the anchor's candidate set; `positive_idx` selects the same-label
/// entries; `weights` carry the consensus weight of each positive. Returns
/// `None` when the positive set is empty (the anchor is skipped).
pub fn loss_l1(
    anchor_new: &[f64],
    positive_idx: &[usize],
    candidates: &[&[f64]],
    weights: &[f64],
    tau: f64,
) -> Result<Option<LossWithGrad>> {
    weighted_soft_contrastive(anchor_new, positive_idx, candidates, weights, tau)
}

/// Dual soft contrastive loss on the discriminative space: identical
/// functional form with classifier logits replacing embeddings. The gradient
/// is with respect to the anchor logits; the caller chains it through the
/// frozen classifier.
pub fn loss_l2_discriminative(
    anchor_logits: &[f64],
    positive_idx: &[usize],
    candidate_logits: &[&[f64]],
    weights: &[f64],
    tau: f64,
) -> Result<Option<LossWithGrad>> {
    weighted_soft_contrastive(anchor_logits, positive_idx, candidate_logits, weights, tau)
}

/// Softmax cross-entropy against a hard label; gradient is
/// softmax(logits) - onehot(label).
pub fn loss_classification(logits: &[f64], label: usize) -> Result<LossWithGrad> {
    if label >= logits.len() {
        return Err(CoreError::IndexError(format!(
            "label {label} out of {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = logits
        .iter()
        .map(|v| (v - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    let value = log_sum_exp - logits[label];
    let mut grad = softmax(logits, 1.0)?;
    grad[label] -= 1.0;
    Ok(LossWithGrad {
        value,
        grad_anchor: grad,
    })
}

/// Combined objective: l_new + alpha * l1 + beta * l2.
pub fn loss_total(l_new: f64, l1: f64, l2: f64, alpha: f64, beta: f64) -> Result<f64> {
    if alpha < 0.0 {
        return Err(CoreError::invalid_parameter(
            "alpha",
            "coefficient must be non-negative",
        ));
    }
    if beta < 0.0 {
        return Err(CoreError::invalid_parameter(
            "beta",
            "coefficient must be non-negative",
        ));
    }
    Ok(l_new + alpha * l1 + beta * l2)
}

/// Regression baseline: squared Euclidean distance between the new embedding
/// and its (dimension-aligned) old counterpart; gradient 2 (new - old).
pub fn loss_l2_regression(new_emb: &[f64], old_emb: &[f64]) -> Result<LossWithGrad> {
    if new_emb.len() != old_emb.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "regression over lengths {} and {}",
            new_emb.len(),
            old_emb.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; new_emb.len()];
    for (i, (n, o)) in new_emb.iter().zip(old_emb.iter()).enumerate() {
        let d = n - o;
        value += d * d;
        grad[i] = 2.0 * d;
    }
    Ok(LossWithGrad {
        value,
        grad_anchor: grad,
    })
}
