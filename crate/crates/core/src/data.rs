//! Synthetic labeled-vector datasets with multi-sub-cluster classes and
//! planted outliers, plus the old/new identity-split protocol.
//!
//! Inputs are raw vectors rather than images: the method under study operates
//! on embeddings, so a pixel pipeline would add nothing at this scale.
//! Planted outliers keep their original label but are redrawn uniformly over
//! the data bounding box, modelling mislabeled or corrupted samples.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{LabeledSample, Split};
use crate::numeric::SeededRng;

/// Fractions of each class assigned to the train/query/gallery splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub query: f64,
    pub gallery: f64,
}

impl SplitFractions {
    pub fn sum(&self) -> f64 {
        self.train + self.query + self.gallery
    }
}

/// Generator parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub classes: usize,
    pub subclusters_per_class: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Scale of the Gaussian draw for class centers.
    pub class_spread: f64,
    /// Scale of the sub-cluster center offsets around each class center.
    pub subcluster_spread: f64,
    /// Within-sub-cluster noise.
    pub noise_sigma: f64,
    /// Fraction of each class replaced by uniform bounding-box draws.
    pub outlier_fraction: f64,
    pub split_fractions: SplitFractions,
    pub seed: u64,
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(CoreError::invalid_parameter(
                "classes",
                "need at least 2 classes",
            ));
        }
        if self.subclusters_per_class == 0 {
            return Err(CoreError::invalid_parameter(
                "subclusters_per_class",
                "need at least 1 sub-cluster",
            ));
        }
        if self.samples_per_class < self.subclusters_per_class {
            return Err(CoreError::invalid_parameter(
                "samples_per_class",
                "must be at least subclusters_per_class",
            ));
        }
        if self.input_dim == 0 {
            return Err(CoreError::invalid_parameter(
                "input_dim",
                "must be positive",
            ));
        }
        if !(0.0..0.5).contains(&self.outlier_fraction) {
            return Err(CoreError::invalid_parameter(
                "outlier_fraction",
                "must lie in [0, 0.5)",
            ));
        }
        let f = &self.split_fractions;
        if (f.sum() - 1.0).abs() > 1e-9 {
            return Err(CoreError::invalid_parameter(
                "split_fractions",
                format!("must sum to 1, got {}", f.sum()),
            ));
        }
        if f.train <= 0.0 || f.query <= 0.0 || f.gallery <= 0.0 {
            return Err(CoreError::invalid_parameter(
                "split_fractions",
                "every split needs a positive fraction",
            ));
        }
        let n = self.samples_per_class;
        let n_train = split_count(f.train, n);
        let n_query = split_count(f.query, n);
        if n_train + n_query >= n {
            return Err(CoreError::invalid_parameter(
                "split_fractions",
                "rounding leaves no gallery samples per class",
            ));
        }
        Ok(())
    }
}

fn split_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// A generated dataset with the ids of its planted outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub spec: DataSpec,
    pub planted_outlier_ids: BTreeSet<u64>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&LabeledSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

/// Draw a dataset: Gaussian class centers, per-class sub-cluster centers,
/// Gaussian samples around sub-clusters (round-robin assignment), planted
/// outliers redrawn uniformly over the clean bounding box, and a stratified
/// seeded split per class.
pub fn generate(spec: &DataSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let d = spec.input_dim;

    let class_centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..d)
                .map(|_| spec.class_spread * rng.standard_normal())
                .collect()
        })
        .collect();
    let subcluster_centers: Vec<Vec<Vec<f64>>> = class_centers
        .iter()
        .map(|center| {
            (0..spec.subclusters_per_class)
                .map(|_| {
                    center
                        .iter()
                        .map(|c| c + spec.subcluster_spread * rng.standard_normal())
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut samples: Vec<LabeledSample> = Vec::with_capacity(spec.classes * spec.samples_per_class);
    let mut next_id = 0u64;
    for (label, subs) in subcluster_centers.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let sub = &subs[i % subs.len()];
            let x: Vec<f64> = sub
                .iter()
                .map(|c| c + spec.noise_sigma * rng.standard_normal())
                .collect();
            samples.push(LabeledSample {
                id: next_id,
                label,
                split: Split::Train, // reassigned below
                x,
            });
            next_id += 1;
        }
    }

    // bounding box of the clean data; outliers are uniform draws inside it
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for s in &samples {
        for (j, v) in s.x.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }

    let mut planted_outlier_ids = BTreeSet::new();
    let n_outliers = (spec.outlier_fraction * spec.samples_per_class as f64).round() as usize;
    if n_outliers > 0 {
        for class in 0..spec.classes {
            let base = class * spec.samples_per_class;
            let indices: Vec<usize> = (0..spec.samples_per_class).collect();
            let chosen = rng.sample_without_replacement(&indices, n_outliers);
            for offset in chosen {
                let idx = base + offset;
                for (j, v) in samples[idx].x.iter_mut().enumerate() {
                    *v = rng.uniform(lo[j], hi[j]);
                }
                planted_outlier_ids.insert(samples[idx].id);
            }
        }
    }

    // stratified split: seeded shuffle within each class, then cut
    let f = &spec.split_fractions;
    let n = spec.samples_per_class;
    let n_train = split_count(f.train, n);
    let n_query = split_count(f.query, n);
    for class in 0..spec.classes {
        let base = class * n;
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for (rank, offset) in order.into_iter().enumerate() {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_query {
                Split::Query
            } else {
                Split::Gallery
            };
            samples[base + offset].split = split;
        }
    }

    Ok(Dataset {
        samples,
        spec: spec.clone(),
        planted_outlier_ids,
    })
}

/// One side of an identity split: train samples with contiguously re-indexed
/// labels and the mapping back to the original label space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetData {
    pub samples: Vec<LabeledSample>,
    /// local label -> original label
    pub class_map: Vec<usize>,
    pub class_count: usize,
}

impl SubsetData {
    pub fn original_label(&self, local: usize) -> Option<usize> {
        self.class_map.get(local).cloned()
    }

    pub fn local_label(&self, original: usize) -> Option<usize> {
        self.class_map.iter().position(|&c| c == original)
    }
}

/// Old/new training sets produced by the identity split.
#[derive(Debug, Clone, PartialEq)]
pub struct IdSplit {
    pub old: SubsetData,
    pub new: SubsetData,
}

/// Split class identities into an old subset and the new training set.
///
/// With `overlap` the new set is every train sample (a superset of the old
/// set); without it the new set covers only the complementary identities.
/// Labels are re-indexed contiguously per returned set, sample ids are
/// preserved.
pub fn id_split(dataset: &Dataset, old_fraction: f64, overlap: bool, seed: u64) -> Result<IdSplit> {
    if !(0.0 < old_fraction && old_fraction < 1.0) {
        return Err(CoreError::invalid_parameter(
            "old_fraction",
            format!("must lie strictly between 0 and 1, got {old_fraction}"),
        ));
    }
    let k = dataset.spec.classes;
    let n_old = (old_fraction * k as f64).round() as usize;
    if n_old == 0 || n_old == k {
        return Err(CoreError::invalid_parameter(
            "old_fraction",
            format!("{old_fraction} leaves an empty side for {k} classes"),
        ));
    }
    let mut classes: Vec<usize> = (0..k).collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut classes);
    let mut old_classes: Vec<usize> = classes[..n_old].to_vec();
    old_classes.sort_unstable();
    let new_classes: Vec<usize> = if overlap {
        (0..k).collect()
    } else {
        let mut rest: Vec<usize> = classes[n_old..].to_vec();
        rest.sort_unstable();
        rest
    };

    let build = |class_map: &[usize]| -> SubsetData {
        let samples: Vec<LabeledSample> = dataset
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .filter_map(|s| {
                class_map
                    .iter()
                    .position(|&c| c == s.label)
                    .map(|local| LabeledSample {
                        id: s.id,
                        label: local,
                        split: s.split,
                        x: s.x.clone(),
                    })
            })
            .collect();
        SubsetData {
            samples,
            class_map: class_map.to_vec(),
            class_count: class_map.len(),
        }
    };

    Ok(IdSplit {
        old: build(&old_classes),
        new: build(&new_classes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> DataSpec {
        DataSpec {
            classes: 4,
            subclusters_per_class: 2,
            samples_per_class: 10,
            input_dim: 3,
            class_spread: 3.0,
            subcluster_spread: 1.0,
            noise_sigma: 0.3,
            outlier_fraction: 0.1,
            split_fractions: SplitFractions {
                train: 0.6,
                query: 0.2,
                gallery: 0.2,
            },
            seed,
        }
    }

    #[test]
    fn zero_outlier_fraction_plants_nothing() {
        let mut spec = small_spec(1);
        spec.outlier_fraction = 0.0;
        let ds = generate(&spec).unwrap();
        assert!(ds.planted_outlier_ids.is_empty());
    }

    #[test]
    fn degenerate_cluster_collapses() {
        let mut spec = small_spec(2);
        spec.subclusters_per_class = 1;
        spec.noise_sigma = 0.0;
        spec.outlier_fraction = 0.0;
        let ds = generate(&spec).unwrap();
        for class in 0..spec.classes {
            let xs: Vec<&Vec<f64>> = ds
                .samples
                .iter()
                .filter(|s| s.label == class)
                .map(|s| &s.x)
                .collect();
            assert!(xs.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate(&small_spec(7)).unwrap();
        let b = generate(&small_spec(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&small_spec(7)).unwrap();
        let b = generate(&small_spec(8)).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn invalid_fractions_name_the_field() {
        let mut spec = small_spec(1);
        spec.split_fractions.train = 0.9;
        let err = generate(&spec).unwrap_err();
        match err {
            CoreError::InvalidParameter { field, .. } => {
                assert_eq!(field, "split_fractions")
            }
            other => panic!("expected InvalidParameter, got {other:?}"),
        }
    }

    #[test]
    fn every_class_present_in_every_split() {
        let ds = generate(&small_spec(3)).unwrap();
        for class in 0..4 {
            for split in [Split::Train, Split::Query, Split::Gallery] {
                assert!(
                    ds.samples
                        .iter()
                        .any(|s| s.label == class && s.split == split),
                    "class {class} missing from {split:?}"
                );
            }
        }
    }

    #[test]
    fn split_sizes_match_fractions() {
        let ds = generate(&small_spec(4)).unwrap();
        let train = ds.split(Split::Train).len();
        let query = ds.split(Split::Query).len();
        let gallery = ds.split(Split::Gallery).len();
        assert_eq!(train, 4 * 6);
        assert_eq!(query, 4 * 2);
        assert_eq!(gallery, 4 * 2);
    }

    #[test]
    fn outliers_lie_farther_from_their_class_center() {
        // median center-distance of planted outliers exceeds the inlier
        // median, per class, across a 5-seed sweep
        for seed in 1..=5u64 {
            let mut spec = small_spec(seed);
            spec.samples_per_class = 30;
            spec.outlier_fraction = 0.1;
            let ds = generate(&spec).unwrap();
            for class in 0..spec.classes {
                let xs: Vec<&LabeledSample> =
                    ds.samples.iter().filter(|s| s.label == class).collect();
                let dim = spec.input_dim;
                let mut center = vec![0.0; dim];
                for s in &xs {
                    for (c, v) in center.iter_mut().zip(s.x.iter()) {
                        *c += v;
                    }
                }
                for c in center.iter_mut() {
                    *c /= xs.len() as f64;
                }
                let dist = |s: &LabeledSample| -> f64 {
                    s.x.iter()
                        .zip(center.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                };
                let mut outlier_d: Vec<f64> = xs
                    .iter()
                    .filter(|s| ds.planted_outlier_ids.contains(&s.id))
                    .map(|s| dist(s))
                    .collect();
                let mut inlier_d: Vec<f64> = xs
                    .iter()
                    .filter(|s| !ds.planted_outlier_ids.contains(&s.id))
                    .map(|s| dist(s))
                    .collect();
                assert!(!outlier_d.is_empty());
                outlier_d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                inlier_d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mo = outlier_d[outlier_d.len() / 2];
                let mi = inlier_d[inlier_d.len() / 2];
                assert!(
                    mo > mi,
                    "seed {seed} class {class}: outlier median {mo} <= inlier median {mi}"
                );
            }
        }
    }

    #[test]
    fn id_split_overlap_superset() {
        let ds = generate(&small_spec(11)).unwrap();
        let split = id_split(&ds, 0.5, true, 99).unwrap();
        assert_eq!(split.old.class_count, 2);
        assert_eq!(split.new.class_count, 4);
        let new_ids: BTreeSet<u64> = split.new.samples.iter().map(|s| s.id).collect();
        for s in &split.old.samples {
            assert!(new_ids.contains(&s.id), "old sample {} not in new", s.id);
        }
    }

    #[test]
    fn id_split_no_overlap_disjoint() {
        let ds = generate(&small_spec(12)).unwrap();
        let split = id_split(&ds, 0.25, false, 99).unwrap();
        assert_eq!(split.old.class_count, 1);
        assert_eq!(split.new.class_count, 3);
        let old_ids: BTreeSet<u64> = split.old.samples.iter().map(|s| s.id).collect();
        assert!(split.new.samples.iter().all(|s| !old_ids.contains(&s.id)));
    }

    #[test]
    fn id_split_same_seed_same_subsets() {
        let ds = generate(&small_spec(13)).unwrap();
        let a = id_split(&ds, 0.5, true, 5).unwrap();
        let b = id_split(&ds, 0.5, true, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn id_split_rejects_empty_side() {
        let ds = generate(&small_spec(14)).unwrap();
        assert!(id_split(&ds, 0.05, true, 1).is_err());
        assert!(id_split(&ds, 0.99, true, 1).is_err());
        assert!(id_split(&ds, 0.0, true, 1).is_err());
        assert!(id_split(&ds, 1.0, true, 1).is_err());
    }

    #[test]
    fn id_split_labels_are_contiguous_and_mapped() {
        let ds = generate(&small_spec(15)).unwrap();
        let split = id_split(&ds, 0.5, false, 21).unwrap();
        for side in [&split.old, &split.new] {
            let mut seen = vec![false; side.class_count];
            for s in &side.samples {
                assert!(s.label < side.class_count);
                seen[s.label] = true;
                // remapping is consistent with the original dataset label
                let original = side.original_label(s.label).unwrap();
                let source = ds.samples.iter().find(|d| d.id == s.id).unwrap();
                assert_eq!(source.label, original);
            }
            assert!(seen.iter().all(|b| *b));
        }
        // reverse map agrees
        for (local, &original) in split.old.class_map.iter().enumerate() {
            assert_eq!(split.old.local_label(original), Some(local));
        }
    }

    #[test]
    fn id_split_takes_only_train_samples() {
        let ds = generate(&small_spec(16)).unwrap();
        let split = id_split(&ds, 0.5, true, 2).unwrap();
        assert!(split.new.samples.iter().all(|s| s.split == Split::Train));
        assert_eq!(split.new.samples.len(), ds.split(Split::Train).len());
    }
}
