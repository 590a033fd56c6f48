//! Independent brute-force reference implementations used only by the test
//! suites: naive soft-contrastive recomputation, exhaustive AP/mAP, a
//! Monte-Carlo random-ranking baseline, and exhaustive compatibility-criterion
//! checkers for tiny instances.
//!
//! Nothing here shares code with the crates under test: sorting, softmax,
//! and cosine are written out locally so an agreement check actually compares
//! two routes to the same quantity.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reference value with its provenance. Exact oracles report sigma = 0;
/// Monte-Carlo oracles report the standard error of the mean.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub method: String,
    pub sample_count: u64,
    pub sigma: f64,
}

impl OracleResult {
    fn exact(value: f64, method: &str) -> Self {
        OracleResult {
            value,
            method: method.to_string(),
            sample_count: 0,
            sigma: 0.0,
        }
    }
}

/// Naive recomputation of the weighted soft contrastive loss: per positive,
/// the softmax is evaluated directly (no max-subtraction). Only meant for
/// small, well-scaled instances.
pub fn oracle_l1(
    anchor: &[f64],
    positive_idx: &[usize],
    candidates: &[Vec<f64>],
    weights: &[f64],
    tau: f64,
) -> OracleResult {
    let dots: Vec<f64> = candidates
        .iter()
        .map(|c| anchor.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let denom: f64 = dots.iter().map(|d| (d / tau).exp()).sum();
    let mut value = 0.0;
    for (&p, &w) in positive_idx.iter().zip(weights.iter()) {
        let s = (dots[p] / tau).exp() / denom;
        value -= w * s.ln();
    }
    OracleResult::exact(value, "naive soft-contrastive recomputation")
}

/// Textbook average precision over one ranked label list.
fn naive_average_precision(ranked: &[usize], query_label: usize) -> Option<f64> {
    let mut hits = 0.0;
    let mut acc = 0.0;
    for (i, &l) in ranked.iter().enumerate() {
        if l == query_label {
            hits += 1.0;
            acc += hits / (i + 1) as f64;
        }
    }
    if hits == 0.0 {
        None
    } else {
        Some(acc / hits)
    }
}

fn naive_cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 1.0;
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

/// Insertion sort on (distance, id) pairs; deliberately separate from any
/// library sort used by production ranking code.
fn insertion_rank(mut items: Vec<(f64, u64, usize)>) -> Vec<usize> {
    for i in 1..items.len() {
        let mut j = i;
        while j > 0 {
            let earlier = (items[j - 1].0, items[j - 1].1);
            let later = (items[j].0, items[j].1);
            if later.0 < earlier.0 || (later.0 == earlier.0 && later.1 < earlier.1) {
                items.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    items.into_iter().map(|(_, _, label)| label).collect()
}

/// Exhaustive mAP under cosine distance with ties broken by ascending
/// gallery id. Intended for instances up to roughly 50 gallery items.
pub fn oracle_map(
    queries: &[(u64, usize, Vec<f64>)],
    gallery: &[(u64, usize, Vec<f64>)],
) -> OracleResult {
    let mut acc = 0.0;
    for (_, q_label, q_vec) in queries {
        let ranked: Vec<(f64, u64, usize)> = gallery
            .iter()
            .map(|(id, label, v)| (naive_cosine_distance(q_vec, v), *id, *label))
            .collect();
        let labels = insertion_rank(ranked);
        acc += naive_average_precision(&labels, *q_label)
            .expect("oracle_map requires every query to have a positive");
    }
    OracleResult::exact(acc / queries.len() as f64, "exhaustive mAP")
}

/// CMC top-k by the same exhaustive route.
pub fn oracle_cmc(
    queries: &[(u64, usize, Vec<f64>)],
    gallery: &[(u64, usize, Vec<f64>)],
    k: usize,
) -> OracleResult {
    let mut hits = 0usize;
    for (_, q_label, q_vec) in queries {
        let ranked: Vec<(f64, u64, usize)> = gallery
            .iter()
            .map(|(id, label, v)| (naive_cosine_distance(q_vec, v), *id, *label))
            .collect();
        let labels = insertion_rank(ranked);
        if labels.iter().take(k).any(|l| l == q_label) {
            hits += 1;
        }
    }
    OracleResult::exact(hits as f64 / queries.len() as f64, "exhaustive CMC")
}

/// Expected mAP of a uniformly random ranking, estimated by shuffling the
/// gallery labels `trials` times. Reports the standard error of the mean.
pub fn oracle_random_map(
    query_labels: &[usize],
    gallery_labels: &[usize],
    trials: usize,
    seed: u64,
) -> OracleResult {
    assert!(trials >= 2, "need at least 2 trials for a standard error");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<usize> = gallery_labels.to_vec();
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        // Fisher-Yates with the raw integer stream
        for i in (1..shuffled.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let mut acc = 0.0;
        for q in query_labels {
            acc += naive_average_precision(&shuffled, *q)
                .expect("every query label must appear in the gallery");
        }
        values.push(acc / query_labels.len() as f64);
    }
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials - 1) as f64;
    OracleResult {
        value: mean,
        method: "Monte-Carlo random-ranking mAP".to_string(),
        sample_count: trials as u64,
        sigma: (var / trials as f64).sqrt(),
    }
}

/// Exact criterion rates from triple/double nested loops. `None` when the
/// corresponding relation set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionRates {
    pub eq3_rate: Option<f64>,
    pub eq12_rate: Option<f64>,
    pub triplet_count: u64,
    pub pair_count: u64,
}

/// Exhaustive evaluation of both compatibility criteria on a tiny instance
/// (up to ~30 samples): the triplet criterion with strict inequality, the
/// pairwise criterion with non-strict inequalities.
pub fn oracle_criterion(
    new_embs: &[Vec<f64>],
    old_embs: &[Vec<f64>],
    labels: &[usize],
) -> CriterionRates {
    let n = labels.len();
    let mut triplet_count = 0u64;
    let mut triplet_pass = 0u64;
    for i in 0..n {
        for j in 0..n {
            if i == j || labels[i] != labels[j] {
                continue;
            }
            for k in 0..n {
                if labels[k] == labels[i] {
                    continue;
                }
                triplet_count += 1;
                let dij = naive_cosine_distance(&new_embs[i], &old_embs[j]);
                let dik = naive_cosine_distance(&new_embs[i], &old_embs[k]);
                if dij < dik {
                    triplet_pass += 1;
                }
            }
        }
    }
    let mut pair_count = 0u64;
    let mut pair_pass = 0u64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            pair_count += 1;
            let cross = naive_cosine_distance(&new_embs[i], &old_embs[j]);
            let base = naive_cosine_distance(&old_embs[i], &old_embs[j]);
            let ok = if labels[i] == labels[j] {
                cross <= base
            } else {
                cross >= base
            };
            if ok {
                pair_pass += 1;
            }
        }
    }
    CriterionRates {
        eq3_rate: (triplet_count > 0).then(|| triplet_pass as f64 / triplet_count as f64),
        eq12_rate: (pair_count > 0).then(|| pair_pass as f64 / pair_count as f64),
        triplet_count,
        pair_count,
    }
}
