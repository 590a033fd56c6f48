//! The frozen store of old-model embeddings with label indexing, credibility
//! flags, and positive/candidate retrieval, plus the discriminative (logit)
//! bank built once the new classifier is frozen.
//!
//! Because the old encoder never changes, the bank is built once over the
//! full training set and is immutable afterwards; the credibility filter
//! clears flags in a single pass before training starts.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::eval::align_dims;
use crate::model::{classify, encode, EncoderParams, FrozenClassifier, LabeledSample};
use crate::numeric::SeededRng;

/// One stored training sample: its id, label, old embedding, and whether the
/// credibility filter kept it.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub id: u64,
    pub label: usize,
    pub embedding: Vec<f64>,
    pub credible: bool,
}

/// Frozen store of old embeddings for every training sample.
#[derive(Debug, Clone)]
pub struct OldEmbeddingBank {
    entries: Vec<BankEntry>,
    by_id: BTreeMap<u64, usize>,
    by_label: BTreeMap<usize, Vec<usize>>,
}

impl OldEmbeddingBank {
    /// Embed every training sample with the old encoder. All entries start
    /// credible; the filter may clear flags later.
    pub fn build(old_encoder: &EncoderParams, dataset: &[LabeledSample]) -> Result<Self> {
        if dataset.is_empty() {
            return Err(CoreError::EmptySet("bank over an empty dataset".into()));
        }
        let mut entries = Vec::with_capacity(dataset.len());
        let mut by_id = BTreeMap::new();
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for sample in dataset {
            let embedding = encode(old_encoder, &sample.x)?;
            let idx = entries.len();
            if by_id.insert(sample.id, idx).is_some() {
                return Err(CoreError::Protocol(format!(
                    "duplicate sample id {} in bank input",
                    sample.id
                )));
            }
            by_label.entry(sample.label).or_default().push(idx);
            entries.push(BankEntry {
                id: sample.id,
                label: sample.label,
                embedding,
                credible: true,
            });
        }
        Ok(OldEmbeddingBank {
            entries,
            by_id,
            by_label,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn credible_count(&self) -> usize {
        self.entries.iter().filter(|e| e.credible).count()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn entry_by_id(&self, id: u64) -> Option<&BankEntry> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    pub fn embedding_dim(&self) -> usize {
        self.entries[0].embedding.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_label.keys().cloned()
    }

    /// Credible same-label entries, excluding the anchor itself. Returned in
    /// bank insertion order (ids as stored), which fixes the reduction order
    /// downstream.
    pub fn positives(&self, anchor_id: u64, anchor_label: usize) -> Vec<u64> {
        match self.by_label.get(&anchor_label) {
            None => Vec::new(),
            Some(indices) => indices
                .iter()
                .map(|&i| &self.entries[i])
                .filter(|e| e.credible && e.id != anchor_id)
                .map(|e| e.id)
                .collect(),
        }
    }

    /// The anchor's candidate set: every credible entry except the anchor.
    /// With `negative_cap` set, all positives plus a seeded uniform sample of
    /// at most that many negatives (sample sorted back into insertion order).
    pub fn candidates(
        &self,
        anchor_id: u64,
        anchor_label: usize,
        negative_cap: Option<usize>,
        rng: &mut SeededRng,
    ) -> Vec<u64> {
        match negative_cap {
            None => self
                .entries
                .iter()
                .filter(|e| e.credible && e.id != anchor_id)
                .map(|e| e.id)
                .collect(),
            Some(cap) => {
                let mut out: Vec<u64> = Vec::new();
                let mut negatives: Vec<u64> = Vec::new();
                for e in self.entries.iter().filter(|e| e.credible && e.id != anchor_id) {
                    if e.label == anchor_label {
                        out.push(e.id);
                    } else {
                        negatives.push(e.id);
                    }
                }
                let mut sampled = rng.sample_without_replacement(&negatives, cap);
                sampled.sort_unstable();
                out.extend(sampled);
                out
            }
        }
    }
}

/// Logits of every credible old embedding under the frozen new classifier.
#[derive(Debug, Clone)]
pub struct DiscriminativeBank {
    entries: Vec<(u64, Vec<f64>)>,
    by_id: BTreeMap<u64, usize>,
    classifier_fingerprint: String,
}

impl DiscriminativeBank {
    /// Push every credible bank embedding through the frozen classifier.
    /// Old embeddings are zero-padded up to the classifier's input width
    /// when the old space is narrower.
    pub fn build(bank: &OldEmbeddingBank, classifier: &FrozenClassifier) -> Result<Self> {
        let want = classifier.params().embedding_dim();
        let have = bank.embedding_dim();
        if want < have {
            return Err(CoreError::DimensionMismatch(format!(
                "classifier expects {want}-dim embeddings but the bank stores {have}-dim; \
                 old embeddings are never truncated"
            )));
        }
        let mut entries = Vec::new();
        let mut by_id = BTreeMap::new();
        for e in bank.entries().iter().filter(|e| e.credible) {
            let padded = align_dims(&e.embedding, want)?;
            let logits = classify(classifier.params(), &padded)?;
            by_id.insert(e.id, entries.len());
            entries.push((e.id, logits));
        }
        Ok(DiscriminativeBank {
            entries,
            by_id,
            classifier_fingerprint: classifier.fingerprint().to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn logits_by_id(&self, id: u64) -> Option<&[f64]> {
        self.by_id.get(&id).map(|&i| self.entries[i].1.as_slice())
    }

    pub fn classifier_fingerprint(&self) -> &str {
        &self.classifier_fingerprint
    }
}

/// Clear the credible flag on the named entries. Only the credibility filter
/// calls this, once, between construction and training.
pub(crate) fn clear_credible_flags(bank: &mut OldEmbeddingBank, ids: &[u64]) {
    for id in ids {
        if let Some(&idx) = bank.by_id.get(id) {
            bank.entries[idx].credible = false;
        }
    }
}
