//! Retrieval metrics (mAP, CMC top-k), the self-test and cross-test
//! protocols, both compatibility criteria, and zero-padding dimension
//! alignment.
//!
//! Ranking uses cosine distance by default (the losses are inner-product
//! based); Euclidean is available for sensitivity checks. Ties break by
//! ascending gallery id so every run is deterministic.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::model::{encode, EncoderParams, LabeledSample};
use crate::numeric::{dot, norm, SeededRng};

/// CMC ranks reported by every evaluation.
pub const CMC_KS: [usize; 3] = [1, 5, 10];

/// Distance used for ranking and the criterion inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Euclidean,
}

pub fn distance(kind: DistanceKind, a: &[f64], b: &[f64]) -> Result<f64> {
    match kind {
        DistanceKind::Cosine => {
            let na = norm(a);
            let nb = norm(b);
            if na == 0.0 || nb == 0.0 {
                // a zero vector carries no direction; treat it as maximally
                // dissimilar rather than erroring out mid-evaluation
                return Ok(1.0);
            }
            Ok(1.0 - dot(a, b)? / (na * nb))
        }
        DistanceKind::Euclidean => {
            if a.len() != b.len() {
                return Err(CoreError::DimensionMismatch(
                    "euclidean distance over unequal lengths".into(),
                ));
            }
            Ok(a.iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt())
        }
    }
}

/// One embedded sample in a retrieval task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub id: u64,
    pub label: usize,
    pub vector: Vec<f64>,
}

/// Query set, gallery set, and the ranking distance.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub queries: Vec<EmbeddedItem>,
    pub gallery: Vec<EmbeddedItem>,
    pub distance: DistanceKind,
}

/// mAP and CMC top-k rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
}

/// Mean over positives of the precision at each positive's rank, for one
/// query's ranked gallery labels.
pub fn average_precision(ranked_labels: &[usize], query_label: usize) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &label) in ranked_labels.iter().enumerate() {
        if label == query_label {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(CoreError::UndefinedQuery(format!(
            "no gallery entry carries label {query_label}"
        )));
    }
    Ok(sum / hits as f64)
}

/// Rank the gallery for every query and aggregate AP and CMC top-k.
pub fn evaluate(task: &RetrievalTask) -> Result<RetrievalMetrics> {
    if task.queries.is_empty() {
        return Err(CoreError::EmptySet("evaluation without queries".into()));
    }
    if task.gallery.is_empty() {
        return Err(CoreError::EmptySet("evaluation without a gallery".into()));
    }
    let mut ap_sum = 0.0;
    let mut cmc_hits: BTreeMap<usize, usize> = CMC_KS.iter().map(|&k| (k, 0)).collect();
    for q in &task.queries {
        let mut ranked: Vec<(f64, u64, usize)> = Vec::with_capacity(task.gallery.len());
        for g in &task.gallery {
            ranked.push((distance(task.distance, &q.vector, &g.vector)?, g.id, g.label));
        }
        // ties break by ascending gallery id
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let labels: Vec<usize> = ranked.iter().map(|r| r.2).collect();
        ap_sum += average_precision(&labels, q.label)?;
        for &k in CMC_KS.iter() {
            if labels.iter().take(k).any(|&l| l == q.label) {
                *cmc_hits.get_mut(&k).unwrap() += 1;
            }
        }
    }
    let n = task.queries.len() as f64;
    Ok(RetrievalMetrics {
        map: ap_sum / n,
        cmc: cmc_hits
            .into_iter()
            .map(|(k, hits)| (k, hits as f64 / n))
            .collect(),
    })
}

/// Embed samples, preserving ids and labels.
pub fn embed_samples(encoder: &EncoderParams, samples: &[&LabeledSample]) -> Result<Vec<EmbeddedItem>> {
    samples
        .iter()
        .map(|s| {
            Ok(EmbeddedItem {
                id: s.id,
                label: s.label,
                vector: encode(encoder, &s.x)?,
            })
        })
        .collect()
}

/// Query and gallery both embedded by the same encoder.
pub fn self_test(
    encoder: &EncoderParams,
    queries: &[&LabeledSample],
    gallery: &[&LabeledSample],
    kind: DistanceKind,
) -> Result<RetrievalMetrics> {
    let task = RetrievalTask {
        queries: embed_samples(encoder, queries)?,
        gallery: embed_samples(encoder, gallery)?,
        distance: kind,
    };
    evaluate(&task)
}

/// Query embedded by the new encoder, gallery by the old; the narrower side
/// is zero-padded so inner products remain comparable.
pub fn cross_test(
    new_encoder: &EncoderParams,
    old_encoder: &EncoderParams,
    queries: &[&LabeledSample],
    gallery: &[&LabeledSample],
    kind: DistanceKind,
) -> Result<RetrievalMetrics> {
    let mut queries = embed_samples(new_encoder, queries)?;
    let mut gallery = embed_samples(old_encoder, gallery)?;
    let d = new_encoder.embedding_dim().max(old_encoder.embedding_dim());
    for item in queries.iter_mut().chain(gallery.iter_mut()) {
        if item.vector.len() < d {
            item.vector = align_dims(&item.vector, d)?;
        }
    }
    evaluate(&RetrievalTask {
        queries,
        gallery,
        distance: kind,
    })
}

/// Zero-pad a vector up to `target_dim`. Inner products against any vector
/// whose leading coordinates match are preserved exactly.
pub fn align_dims(old_emb: &[f64], target_dim: usize) -> Result<Vec<f64>> {
    if target_dim < old_emb.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "cannot shrink a {}-dim embedding to {target_dim}",
            old_emb.len()
        )));
    }
    let mut out = old_emb.to_vec();
    out.resize(target_dim, 0.0);
    Ok(out)
}

/// Satisfaction rates for the two compatibility criteria.
///
/// The triplet criterion requires d(new_i, old_j) < d(new_i, old_k) strictly
/// for every (i, j, k) with y_i = y_j != y_k and i != j. The pairwise
/// criterion requires, non-strictly, that cross-class new-old distances do
/// not shrink and same-class new-old distances do not grow relative to the
/// old-old distances. Equality therefore satisfies the pairwise form but not
/// the triplet form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub eq3_rate: Option<f64>,
    pub eq12_rate: Option<f64>,
    pub triplet_count: u64,
    pub pair_count: u64,
    pub sampled: bool,
}

/// Evaluate both criteria over aligned new/old embeddings of the same
/// samples (same index order in both slices).
///
/// Exhaustive when the triplet set fits under `max_triplets`; otherwise a
/// seeded uniform sample of that size. Pairs are treated the same way.
pub fn criterion_report(
    new_embs: &[Vec<f64>],
    old_embs: &[Vec<f64>],
    labels: &[usize],
    kind: DistanceKind,
    max_triplets: usize,
    rng: &mut SeededRng,
) -> Result<CriterionReport> {
    let n = labels.len();
    if new_embs.len() != n || old_embs.len() != n {
        return Err(CoreError::DimensionMismatch(
            "criterion: embeddings and labels differ in length".into(),
        ));
    }
    if n > 0 && new_embs[0].len() != old_embs[0].len() {
        return Err(CoreError::DimensionMismatch(
            "criterion: new/old embeddings must be dimension-aligned".into(),
        ));
    }
    let distinct: std::collections::BTreeSet<usize> = labels.iter().cloned().collect();
    if distinct.len() < 2 {
        return Err(CoreError::Protocol(
            "criterion needs at least 2 distinct labels".into(),
        ));
    }
    if max_triplets == 0 {
        return Err(CoreError::invalid_parameter(
            "max_triplets",
            "must be positive",
        ));
    }

    // same-label (minus self) and different-label counts per anchor
    let mut same: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut diff: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                same[i].push(j);
            } else {
                diff[i].push(j);
            }
        }
    }

    let d_new_old = |i: usize, j: usize| distance(kind, &new_embs[i], &old_embs[j]);
    let d_old_old = |i: usize, j: usize| distance(kind, &old_embs[i], &old_embs[j]);

    // triplets
    let total_triplets: u64 = (0..n)
        .map(|i| same[i].len() as u64 * diff[i].len() as u64)
        .sum();
    let mut triplet_pass = 0u64;
    let mut triplet_count = 0u64;
    let mut sampled = false;
    if total_triplets == 0 {
        // degenerate: no (i, j, k) with two distinct same-label samples
    } else if total_triplets <= max_triplets as u64 {
        for i in 0..n {
            for &j in &same[i] {
                let dij = d_new_old(i, j)?;
                for &k in &diff[i] {
                    triplet_count += 1;
                    if dij < d_new_old(i, k)? {
                        triplet_pass += 1;
                    }
                }
            }
        }
    } else {
        sampled = true;
        // uniform over the triplet set: pick the anchor with probability
        // proportional to its triplet count, then j and k uniformly
        let weights: Vec<u64> = (0..n)
            .map(|i| same[i].len() as u64 * diff[i].len() as u64)
            .collect();
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0u64;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        for _ in 0..max_triplets {
            let t = rng.next_u64() % acc;
            let i = cumulative.partition_point(|&c| c <= t);
            let j = same[i][rng.index(same[i].len())];
            let k = diff[i][rng.index(diff[i].len())];
            triplet_count += 1;
            if d_new_old(i, j)? < d_new_old(i, k)? {
                triplet_pass += 1;
            }
        }
    }

    // ordered pairs (i, j), i != j: Eq1 for different labels (cross-class
    // distance must not shrink), Eq2 for equal labels (same-class distance
    // must not grow)
    let total_pairs = (n as u64) * (n as u64 - 1);
    let mut pair_pass = 0u64;
    let mut pair_count = 0u64;
    if total_pairs <= max_triplets as u64 {
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                pair_count += 1;
                let cross = d_new_old(i, j)?;
                let base = d_old_old(i, j)?;
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
    } else {
        sampled = true;
        for _ in 0..max_triplets {
            let i = rng.index(n);
            let mut j = rng.index(n - 1);
            if j >= i {
                j += 1;
            }
            pair_count += 1;
            let cross = d_new_old(i, j)?;
            let base = d_old_old(i, j)?;
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

    Ok(CriterionReport {
        eq3_rate: if triplet_count == 0 {
            None
        } else {
            Some(triplet_pass as f64 / triplet_count as f64)
        },
        eq12_rate: if pair_count == 0 {
            None
        } else {
            Some(pair_pass as f64 / pair_count as f64)
        },
        triplet_count,
        pair_count,
        sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: u64, label: usize, v: Vec<f64>) -> EmbeddedItem {
        EmbeddedItem {
            id,
            label,
            vector: v,
        }
    }

    #[test]
    fn ap_perfect_ranking() {
        assert_eq!(average_precision(&[0, 0, 1, 1], 0).unwrap(), 1.0);
    }

    #[test]
    fn ap_pos_neg_pos() {
        let ap = average_precision(&[0, 1, 0], 0).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ap_single_positive_closed_form() {
        for r in 1..=6usize {
            let mut labels = vec![1usize; 6];
            labels[r - 1] = 0;
            let ap = average_precision(&labels, 0).unwrap();
            assert!((ap - 1.0 / r as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_no_positive_is_undefined() {
        assert!(matches!(
            average_precision(&[1, 1], 0),
            Err(CoreError::UndefinedQuery(_))
        ));
    }

    #[test]
    fn evaluate_identity_retrieval() {
        // gallery carries exact copies of the query vectors under fresh ids,
        // one gallery item per label
        let queries = vec![
            item(0, 0, vec![1.0, 0.0]),
            item(1, 1, vec![0.0, 1.0]),
            item(2, 2, vec![-1.0, 0.0]),
        ];
        let gallery = vec![
            item(10, 0, vec![1.0, 0.0]),
            item(11, 1, vec![0.0, 1.0]),
            item(12, 2, vec![-1.0, 0.0]),
        ];
        let m = evaluate(&RetrievalTask {
            queries,
            gallery,
            distance: DistanceKind::Cosine,
        })
        .unwrap();
        assert_eq!(m.map, 1.0);
        assert_eq!(m.cmc[&1], 1.0);
    }

    #[test]
    fn evaluate_cmc_monotone() {
        let mut rng = SeededRng::new(5);
        let queries: Vec<EmbeddedItem> = (0..10)
            .map(|i| {
                item(
                    i,
                    (i % 4) as usize,
                    (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                )
            })
            .collect();
        let gallery: Vec<EmbeddedItem> = (0..20)
            .map(|i| {
                item(
                    100 + i,
                    (i % 4) as usize,
                    (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                )
            })
            .collect();
        let m = evaluate(&RetrievalTask {
            queries,
            gallery,
            distance: DistanceKind::Cosine,
        })
        .unwrap();
        assert!(m.cmc[&1] <= m.cmc[&5]);
        assert!(m.cmc[&5] <= m.cmc[&10]);
    }

    #[test]
    fn evaluate_empty_queries_errors() {
        let r = evaluate(&RetrievalTask {
            queries: vec![],
            gallery: vec![item(0, 0, vec![1.0])],
            distance: DistanceKind::Cosine,
        });
        assert!(matches!(r, Err(CoreError::EmptySet(_))));
    }

    #[test]
    fn evaluate_breaks_ties_by_gallery_id() {
        // two gallery items at identical distance; the lower id wins rank 1
        let queries = vec![item(0, 7, vec![1.0, 0.0])];
        let gallery = vec![
            item(5, 9, vec![1.0, 0.0]),
            item(3, 7, vec![1.0, 0.0]),
        ];
        let m = evaluate(&RetrievalTask {
            queries,
            gallery,
            distance: DistanceKind::Cosine,
        })
        .unwrap();
        // id 3 (correct label) precedes id 5 at equal distance
        assert_eq!(m.cmc[&1], 1.0);
    }

    #[test]
    fn align_dims_pads_with_zeros() {
        assert_eq!(align_dims(&[1.0, 2.0], 4).unwrap(), vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn align_dims_identity() {
        assert_eq!(align_dims(&[1.0, 2.0], 2).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn align_dims_preserves_dot() {
        let a = [0.3, -0.8];
        let b = [1.5, 2.0, -0.4, 0.9];
        let padded = align_dims(&a, 4).unwrap();
        assert_eq!(
            dot(&padded, &b).unwrap(),
            dot(&a, &b[..2].to_vec()).unwrap()
        );
    }

    #[test]
    fn align_dims_rejects_shrinking() {
        assert!(matches!(
            align_dims(&[1.0, 2.0, 3.0], 2),
            Err(CoreError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn cross_test_with_same_encoder_is_self_test() {
        let mut rng = SeededRng::new(33);
        let enc = EncoderParams::init(3, 4, 2, &mut rng).unwrap();
        let samples: Vec<LabeledSample> = (0..12)
            .map(|i| LabeledSample {
                id: i,
                label: (i % 3) as usize,
                split: crate::model::Split::Query,
                x: (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            })
            .collect();
        let queries: Vec<&LabeledSample> = samples[..6].iter().collect();
        let gallery: Vec<&LabeledSample> = samples[6..].iter().collect();
        let a = self_test(&enc, &queries, &gallery, DistanceKind::Cosine).unwrap();
        let b = cross_test(&enc, &enc, &queries, &gallery, DistanceKind::Cosine).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn criterion_copy_of_separable_space() {
        // margin-separated old space copied into the new space: the triplet
        // criterion holds everywhere and the pairwise one holds with equality
        let embs = vec![
            vec![1.0, 0.0],
            vec![0.98, 0.02],
            vec![-1.0, 0.1],
            vec![-0.98, 0.05],
        ];
        let labels = vec![0, 0, 1, 1];
        let mut rng = SeededRng::new(1);
        let r = criterion_report(
            &embs,
            &embs,
            &labels,
            DistanceKind::Cosine,
            1_000_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.eq3_rate, Some(1.0));
        assert_eq!(r.eq12_rate, Some(1.0));
        assert!(!r.sampled);
    }

    #[test]
    fn criterion_two_samples_has_no_triplets() {
        let new = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let labels = vec![0, 1];
        let mut rng = SeededRng::new(1);
        let r = criterion_report(
            &new.clone(),
            &new,
            &labels,
            DistanceKind::Cosine,
            1000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.eq3_rate, None);
        assert_eq!(r.triplet_count, 0);
        assert!(r.eq12_rate.is_some());
    }

    #[test]
    fn criterion_single_label_is_protocol_error() {
        let embs = vec![vec![1.0], vec![0.5]];
        let mut rng = SeededRng::new(1);
        assert!(matches!(
            criterion_report(
                &embs.clone(),
                &embs,
                &[0, 0],
                DistanceKind::Cosine,
                100,
                &mut rng
            ),
            Err(CoreError::Protocol(_))
        ));
    }

    #[test]
    fn criterion_sampling_kicks_in_and_is_reproducible() {
        let mut rng_data = SeededRng::new(4);
        let n = 24;
        let embs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng_data.uniform(-1.0, 1.0)).collect())
            .collect();
        let old: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng_data.uniform(-1.0, 1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let a = criterion_report(
            &embs,
            &old,
            &labels,
            DistanceKind::Cosine,
            500,
            &mut SeededRng::new(9),
        )
        .unwrap();
        let b = criterion_report(
            &embs,
            &old,
            &labels,
            DistanceKind::Cosine,
            500,
            &mut SeededRng::new(9),
        )
        .unwrap();
        assert!(a.sampled);
        assert_eq!(a, b);
        assert_eq!(a.triplet_count, 500);
    }

    proptest! {
        #[test]
        fn map_invariant_under_query_rescale(scale in 0.1..10.0f64, seed in 0..200u64) {
            let mut rng = SeededRng::new(seed);
            let queries: Vec<EmbeddedItem> = (0..6)
                .map(|i| item(i, (i % 2) as usize, (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()))
                .collect();
            let gallery: Vec<EmbeddedItem> = (0..10)
                .map(|i| item(50 + i, (i % 2) as usize, (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect()))
                .collect();
            let base = evaluate(&RetrievalTask {
                queries: queries.clone(),
                gallery: gallery.clone(),
                distance: DistanceKind::Cosine,
            }).unwrap();
            let scaled_queries: Vec<EmbeddedItem> = queries
                .iter()
                .map(|q| item(q.id, q.label, q.vector.iter().map(|v| v * scale).collect()))
                .collect();
            let scaled = evaluate(&RetrievalTask {
                queries: scaled_queries,
                gallery,
                distance: DistanceKind::Cosine,
            }).unwrap();
            prop_assert!((base.map - scaled.map).abs() <= 1e-9);
            for k in CMC_KS {
                prop_assert!((base.cmc[&k] - scaled.cmc[&k]).abs() <= 1e-9);
            }
        }

        #[test]
        fn ap_is_one_iff_positives_lead(seed in 0..500u64) {
            let mut rng = SeededRng::new(seed);
            let n = 2 + (rng.next_u64() % 8) as usize;
            let labels: Vec<usize> = (0..n).map(|_| (rng.next_u64() % 2) as usize).collect();
            prop_assume!(labels.contains(&0));
            let ap = average_precision(&labels, 0).unwrap();
            let positives = labels.iter().filter(|&&l| l == 0).count();
            let leading = labels.iter().take(positives).all(|&l| l == 0);
            prop_assert_eq!(ap == 1.0, leading);
        }
    }
}
