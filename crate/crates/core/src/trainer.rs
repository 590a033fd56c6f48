//! Two-stage optimization of the new encoder and classifier: stage 1
//! minimizes the classification loss plus the weighted embedding-space
//! contrastive term; stage 2 freezes the classifier, builds the
//! discriminative bank, and adds the dual logit-space term. Baseline modes
//! (independent cross-entropy, per-sample regression onto the old
//! embeddings) share the same loop.
//!
//! Determinism contract: one ChaCha stream seeded from the config drives
//! initialization, the per-epoch anchor shuffle, and any negative sampling,
//! in that order; gradient reduction within a batch is ordered by sample id.
//! Two runs with the same config and seed are bit-identical.

use serde::{Deserialize, Serialize};

use crate::bank::{DiscriminativeBank, OldEmbeddingBank};
use crate::error::{CoreError, Result};
use crate::eval::align_dims;
use crate::filter::KernelBandwidth;
use crate::losses::{
    consensus_weight, loss_classification, loss_l1, loss_l2_discriminative, loss_l2_regression,
    loss_total,
};
use crate::model::{
    classify, classify_backward, encode, encode_backward, ClassifierGrads, ClassifierParams,
    EncoderGrads, EncoderParams, FrozenClassifier, LabeledSample,
};
use crate::numeric::{l2_normalize, l2_normalize_backward, SeededRng};

/// Training regime for the new model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Full method: classification + weighted contrastive terms, two stages.
    Nccl,
    /// Plain cross-entropy; the bank is ignored.
    Independent,
    /// Classification plus alpha-weighted squared-distance regression onto
    /// each sample's own old embedding.
    L2Regression,
}

/// Hyperparameters and schedule for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Entropy threshold factor: threshold = u_factor * ln(class_count).
    pub u_factor: f64,
    /// Statistic of the squared-distance set used as the credibility-filter
    /// kernel bandwidth.
    #[serde(default)]
    pub kernel_bandwidth: KernelBandwidth,
    pub learning_rate: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
    /// Normalize embeddings before the affinity inner products.
    pub normalize_embeddings: bool,
    /// Cap on sampled negatives per anchor; `None` uses the full bank.
    pub negative_cap: Option<usize>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(CoreError::invalid_parameter("alpha", "must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(CoreError::invalid_parameter("beta", "must be >= 0"));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::invalid_parameter("tau", "must be > 0"));
        }
        if !(self.u_factor > 0.0 && self.u_factor <= 1.0) {
            return Err(CoreError::invalid_parameter(
                "u_factor",
                "must lie in (0, 1]",
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(CoreError::invalid_parameter(
                "learning_rate",
                "must be finite and >= 0",
            ));
        }
        if self.batch_size == 0 {
            return Err(CoreError::invalid_parameter("batch_size", "must be >= 1"));
        }
        if self.embedding_dim < 2 {
            return Err(CoreError::invalid_parameter(
                "embedding_dim",
                "must be >= 2",
            ));
        }
        if self.hidden_dim == 0 {
            return Err(CoreError::invalid_parameter("hidden_dim", "must be >= 1"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_stage1 + self.epochs_stage2
    }
}

/// Per-epoch mean losses over all anchors. `l1` carries the contrastive term
/// in nccl mode and the regression term in l2_regression mode; `total`
/// applies the alpha/beta weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub l_new: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

/// Final parameters plus the run's training trace.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub classifier_frozen: bool,
    /// Fingerprint taken at freeze time; the classifier must still match it
    /// at the end of the run.
    pub frozen_fingerprint: Option<String>,
    pub epoch: usize,
    pub loss_history: Vec<LossRecord>,
    /// Anchors whose positive set was empty, per epoch.
    pub skipped_anchors: Vec<usize>,
    /// Non-credible bank entries observed in any P(i)/A(i); stays zero.
    pub non_credible_touches: u64,
}

/// One plain gradient step: p <- p - lr * g. Rejects non-finite gradients.
pub fn sgd_step(values: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    if values.len() != grads.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "sgd_step over {} values and {} gradients",
            values.len(),
            grads.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::Numeric("non-finite gradient in sgd_step".into()));
    }
    for (v, g) in values.iter_mut().zip(grads.iter()) {
        *v -= learning_rate * g;
    }
    Ok(())
}

fn sgd_step_encoder(params: &mut EncoderParams, grads: &EncoderGrads, lr: f64) -> Result<()> {
    sgd_step(params.w1.data_mut(), grads.w1.data(), lr)?;
    sgd_step(&mut params.b1, &grads.b1, lr)?;
    sgd_step(params.w2.data_mut(), grads.w2.data(), lr)?;
    sgd_step(&mut params.b2, &grads.b2, lr)?;
    Ok(())
}

fn sgd_step_classifier(params: &mut ClassifierParams, grads: &ClassifierGrads, lr: f64) -> Result<()> {
    sgd_step(params.w.data_mut(), grads.w.data(), lr)?;
    sgd_step(&mut params.b, &grads.b, lr)?;
    Ok(())
}

/// Old embeddings prepared once per run: padded to the new embedding width
/// and normalized when the policy asks for it.
struct BankView {
    ids: Vec<u64>,
    raw: Vec<Vec<f64>>,
    prepped: Vec<Vec<f64>>,
    credible: Vec<bool>,
    index_of_id: std::collections::BTreeMap<u64, usize>,
}

impl BankView {
    fn build(bank: &OldEmbeddingBank, target_dim: usize, normalize: bool) -> Result<Self> {
        if bank.embedding_dim() > target_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "old embeddings are {}-dim but the new space is {target_dim}-dim; \
                 old embeddings are only ever zero-padded, never truncated",
                bank.embedding_dim()
            )));
        }
        let mut ids = Vec::with_capacity(bank.len());
        let mut raw = Vec::with_capacity(bank.len());
        let mut prepped = Vec::with_capacity(bank.len());
        let mut credible = Vec::with_capacity(bank.len());
        let mut index_of_id = std::collections::BTreeMap::new();
        for e in bank.entries() {
            let padded = align_dims(&e.embedding, target_dim)?;
            let p = if normalize {
                l2_normalize(&padded)?
            } else {
                padded.clone()
            };
            index_of_id.insert(e.id, ids.len());
            credible.push(e.credible);
            ids.push(e.id);
            raw.push(e.embedding.clone());
            prepped.push(p);
        }
        Ok(BankView {
            ids,
            raw,
            prepped,
            credible,
            index_of_id,
        })
    }

    fn index(&self, id: u64) -> Result<usize> {
        self.index_of_id.get(&id).cloned().ok_or_else(|| {
            CoreError::Protocol(format!("anchor id {id} has no bank entry"))
        })
    }
}

/// Train the new model against a filtered bank (or none for the independent
/// baseline). Deterministic given the config.
pub fn train(
    config: &TrainingConfig,
    train_data: &[LabeledSample],
    class_count: usize,
    bank: Option<&OldEmbeddingBank>,
) -> Result<TrainingState> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(CoreError::EmptySet("training data is empty".into()));
    }
    if class_count < 2 {
        return Err(CoreError::invalid_parameter(
            "class_count",
            "need at least 2 classes",
        ));
    }
    for s in train_data {
        if s.label >= class_count {
            return Err(CoreError::IndexError(format!(
                "sample {} has label {} outside [0, {class_count})",
                s.id, s.label
            )));
        }
    }
    let needs_bank = matches!(config.mode, Mode::Nccl | Mode::L2Regression);
    if needs_bank && bank.is_none() {
        return Err(CoreError::Protocol(format!(
            "mode {:?} requires an old-embedding bank",
            config.mode
        )));
    }

    let input_dim = train_data[0].x.len();
    let mut rng = SeededRng::new(config.seed);
    let mut encoder = EncoderParams::init(input_dim, config.hidden_dim, config.embedding_dim, &mut rng)?;
    let mut classifier = ClassifierParams::init(class_count, config.embedding_dim, &mut rng)?;

    let bank_view = if needs_bank {
        Some(BankView::build(
            bank.unwrap(),
            config.embedding_dim,
            config.normalize_embeddings,
        )?)
    } else {
        None
    };

    let mut frozen: Option<FrozenClassifier> = None;
    let mut disc_logits: Option<Vec<Option<Vec<f64>>>> = None; // by bank-view index
    let mut frozen_fingerprint = None;

    let mut loss_history = Vec::with_capacity(config.total_epochs());
    let mut skipped_anchors = Vec::with_capacity(config.total_epochs());
    let mut non_credible_touches = 0u64;

    // Without a negative cap the candidate set of every anchor is fixed for
    // the whole run, so resolve ids, positive positions, and consensus
    // weights once. With a cap the sampling consumes the rng per epoch and
    // the plan is rebuilt inside the loop.
    struct AnchorPlan {
        cand_view_idx: Vec<usize>,
        pos_in_cands: Vec<usize>,
        weights: Vec<f64>,
    }
    let build_plan = |sample: &LabeledSample,
                      view: &BankView,
                      the_bank: &OldEmbeddingBank,
                      rng: &mut SeededRng|
     -> Result<Option<AnchorPlan>> {
        let anchor_idx = view.index(sample.id)?;
        let pos_ids = the_bank.positives(sample.id, sample.label);
        if pos_ids.is_empty() {
            return Ok(None);
        }
        let cand_ids = the_bank.candidates(sample.id, sample.label, config.negative_cap, rng);
        let mut pos_in_cands = Vec::with_capacity(pos_ids.len());
        let mut cand_view_idx = Vec::with_capacity(cand_ids.len());
        for (pos, id) in cand_ids.iter().enumerate() {
            cand_view_idx.push(view.index(*id)?);
            if pos_ids.contains(id) {
                pos_in_cands.push(pos);
            }
        }
        debug_assert_eq!(pos_in_cands.len(), pos_ids.len());
        let weights: Vec<f64> = pos_in_cands
            .iter()
            .map(|&pos| consensus_weight(&view.raw[anchor_idx], &view.raw[cand_view_idx[pos]]))
            .collect::<Result<_>>()?;
        Ok(Some(AnchorPlan {
            cand_view_idx,
            pos_in_cands,
            weights,
        }))
    };
    let static_plans: Option<Vec<Option<AnchorPlan>>> =
        if config.mode == Mode::Nccl && config.negative_cap.is_none() {
            let view = bank_view.as_ref().unwrap();
            let the_bank = bank.unwrap();
            let mut plans = Vec::with_capacity(train_data.len());
            for sample in train_data {
                plans.push(build_plan(sample, view, the_bank, &mut rng)?);
            }
            Some(plans)
        } else {
            None
        };

    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..config.total_epochs() {
        // stage boundary: freeze the head and precompute old-logit targets
        if config.mode == Mode::Nccl && config.epochs_stage2 > 0 && epoch == config.epochs_stage1 {
            let snapshot = FrozenClassifier::new(classifier.clone());
            frozen_fingerprint = Some(snapshot.fingerprint().to_string());
            let disc = DiscriminativeBank::build(bank.unwrap(), &snapshot)?;
            let view = bank_view.as_ref().unwrap();
            disc_logits = Some(
                view.ids
                    .iter()
                    .map(|id| disc.logits_by_id(*id).map(|l| l.to_vec()))
                    .collect(),
            );
            frozen = Some(snapshot);
        }
        let stage2 = frozen.is_some();

        rng.shuffle(&mut order);

        let mut sum_l_new = 0.0;
        let mut sum_l1 = 0.0;
        let mut sum_l2 = 0.0;
        let mut skipped = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let mut batch: Vec<usize> = chunk.to_vec();
            // reduction order fixed by sample id
            batch.sort_by_key(|&i| train_data[i].id);
            let batch_n = batch.len() as f64;

            let mut enc_grads = EncoderGrads::zeros_like(&encoder);
            let mut cls_grads = ClassifierGrads::zeros_like(&classifier);

            for &i in &batch {
                let sample = &train_data[i];
                let e = encode(&encoder, &sample.x)?;
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(CoreError::NumericDivergence {
                        epoch,
                        message: format!("non-finite embedding for sample {}", sample.id),
                    });
                }

                let logits = classify(&classifier, &e)?;
                let ce = loss_classification(&logits, sample.label)?;
                sum_l_new += ce.value;
                let (ce_cls_grads, ce_grad_e) = classify_backward(&classifier, &e, &ce.grad_anchor)?;
                let mut grad_e = ce_grad_e;
                if !stage2 {
                    cls_grads.accumulate(&ce_cls_grads, 1.0);
                }

                match config.mode {
                    Mode::Independent => {}
                    Mode::L2Regression => {
                        let view = bank_view.as_ref().unwrap();
                        let idx = view.index(sample.id)?;
                        let target = align_dims(&view.raw[idx], config.embedding_dim)?;
                        let reg = loss_l2_regression(&e, &target)?;
                        sum_l1 += reg.value;
                        for (g, r) in grad_e.iter_mut().zip(reg.grad_anchor.iter()) {
                            *g += config.alpha * r;
                        }
                    }
                    Mode::Nccl => {
                        let view = bank_view.as_ref().unwrap();
                        let fresh_plan;
                        let plan = match &static_plans {
                            Some(plans) => plans[i].as_ref(),
                            None => {
                                fresh_plan =
                                    build_plan(sample, view, bank.unwrap(), &mut rng)?;
                                fresh_plan.as_ref()
                            }
                        };
                        let plan = match plan {
                            None => {
                                // the anchor still contributes its
                                // classification term; only the contrastive
                                // terms are skipped
                                skipped += 1;
                                let per_anchor =
                                    encode_backward(&encoder, &sample.x, &grad_e)?;
                                enc_grads.accumulate(&per_anchor, 1.0);
                                continue;
                            }
                            Some(p) => p,
                        };
                        for &vi in &plan.cand_view_idx {
                            if !view.credible[vi] {
                                non_credible_touches += 1;
                            }
                        }

                        let cands: Vec<&[f64]> = plan
                            .cand_view_idx
                            .iter()
                            .map(|&vi| view.prepped[vi].as_slice())
                            .collect();
                        let anchor_z = if config.normalize_embeddings {
                            l2_normalize(&e)?
                        } else {
                            e.clone()
                        };
                        if let Some(l1) = loss_l1(
                            &anchor_z,
                            &plan.pos_in_cands,
                            &cands,
                            &plan.weights,
                            config.tau,
                        )? {
                            sum_l1 += l1.value;
                            let grad_raw = if config.normalize_embeddings {
                                l2_normalize_backward(&e, &l1.grad_anchor)?
                            } else {
                                l1.grad_anchor
                            };
                            for (g, r) in grad_e.iter_mut().zip(grad_raw.iter()) {
                                *g += config.alpha * r;
                            }
                        }

                        if stage2 {
                            let head = frozen.as_ref().unwrap();
                            let logit_table = disc_logits.as_ref().unwrap();
                            let anchor_logits = classify(head.params(), &e)?;
                            let cand_logits: Vec<&[f64]> = plan
                                .cand_view_idx
                                .iter()
                                .map(|&vi| {
                                    logit_table[vi].as_deref().ok_or_else(|| {
                                        CoreError::Protocol(format!(
                                            "candidate {} missing from the discriminative bank",
                                            view.ids[vi]
                                        ))
                                    })
                                })
                                .collect::<Result<_>>()?;
                            if let Some(l2) = loss_l2_discriminative(
                                &anchor_logits,
                                &plan.pos_in_cands,
                                &cand_logits,
                                &plan.weights,
                                config.tau,
                            )? {
                                sum_l2 += l2.value;
                                // chain through the frozen head; its own
                                // parameter gradients are discarded
                                let (_, grad_e_l2) =
                                    classify_backward(head.params(), &e, &l2.grad_anchor)?;
                                for (g, r) in grad_e.iter_mut().zip(grad_e_l2.iter()) {
                                    *g += config.beta * r;
                                }
                            }
                        }
                    }
                }

                let per_anchor = encode_backward(&encoder, &sample.x, &grad_e)?;
                enc_grads.accumulate(&per_anchor, 1.0);
            }

            // mean over the batch
            let scaled_lr = config.learning_rate / batch_n;
            sgd_step_encoder(&mut encoder, &enc_grads, scaled_lr).map_err(|e| match e {
                CoreError::Numeric(m) => CoreError::NumericDivergence { epoch, message: m },
                other => other,
            })?;
            if !stage2 {
                sgd_step_classifier(&mut classifier, &cls_grads, scaled_lr).map_err(|e| match e {
                    CoreError::Numeric(m) => CoreError::NumericDivergence { epoch, message: m },
                    other => other,
                })?;
            }
        }

        let n = train_data.len() as f64;
        let record = LossRecord {
            l_new: sum_l_new / n,
            l1: sum_l1 / n,
            l2: sum_l2 / n,
            total: loss_total(sum_l_new / n, sum_l1 / n, sum_l2 / n, config.alpha, config.beta)?,
        };
        if !record.total.is_finite() {
            return Err(CoreError::NumericDivergence {
                epoch,
                message: format!("epoch loss is {}", record.total),
            });
        }
        loss_history.push(record);
        skipped_anchors.push(skipped);
    }

    if let Some(fp) = &frozen_fingerprint {
        debug_assert_eq!(fp, &classifier.fingerprint(), "frozen classifier moved");
    }

    Ok(TrainingState {
        encoder,
        classifier,
        classifier_frozen: frozen_fingerprint.is_some(),
        frozen_fingerprint,
        epoch: config.total_epochs(),
        loss_history,
        skipped_anchors,
        non_credible_touches,
    })
}

/// Independent cross-entropy training of the old model on the old identity
/// subset. Labels must be contiguous in [0, class_count). The returned state
/// carries the encoder, the classifier, and the loss trace.
pub fn train_old(
    config: &TrainingConfig,
    old_train_data: &[LabeledSample],
    class_count: usize,
) -> Result<TrainingState> {
    let mut seen = vec![false; class_count];
    for s in old_train_data {
        if s.label >= class_count {
            return Err(CoreError::IndexError(format!(
                "old sample {} has label {} outside [0, {class_count})",
                s.id, s.label
            )));
        }
        seen[s.label] = true;
    }
    if let Some(missing) = seen.iter().position(|b| !b) {
        return Err(CoreError::Protocol(format!(
            "old labels are not contiguous: class {missing} is absent"
        )));
    }
    let mut cfg = config.clone();
    cfg.mode = Mode::Independent;
    train(&cfg, old_train_data, class_count, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Split;

    fn toy_data(n_per_class: usize, classes: usize, dim: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = SeededRng::new(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| 3.0 * rng.standard_normal()).collect())
            .collect();
        let mut out = Vec::new();
        let mut id = 0;
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..n_per_class {
                out.push(LabeledSample {
                    id,
                    label,
                    split: Split::Train,
                    x: c.iter().map(|v| v + 0.3 * rng.standard_normal()).collect(),
                });
                id += 1;
            }
        }
        out
    }

    fn base_config(mode: Mode, seed: u64) -> TrainingConfig {
        TrainingConfig {
            mode,
            alpha: 0.01,
            beta: 0.01,
            tau: 1.0,
            u_factor: 0.5,
            kernel_bandwidth: KernelBandwidth::StdDev,
            learning_rate: 0.1,
            epochs_stage1: 6,
            epochs_stage2: 2,
            batch_size: 8,
            seed,
            hidden_dim: 6,
            embedding_dim: 4,
            normalize_embeddings: true,
            negative_cap: None,
        }
    }

    fn old_bank(data: &[LabeledSample], seed: u64) -> OldEmbeddingBank {
        let mut rng = SeededRng::new(seed);
        let enc = EncoderParams::init(data[0].x.len(), 6, 4, &mut rng).unwrap();
        OldEmbeddingBank::build(&enc, data).unwrap()
    }

    #[test]
    fn sgd_step_zero_gradient_keeps_params() {
        let mut v = [1.0, -2.0];
        sgd_step(&mut v, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(v, [1.0, -2.0]);
    }

    #[test]
    fn sgd_step_zero_lr_keeps_params() {
        let mut v = [1.0, -2.0];
        sgd_step(&mut v, &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(v, [1.0, -2.0]);
    }

    #[test]
    fn sgd_step_quadratic_hand_value() {
        // f(w) = w^2 at w = 1 with lr 0.1: w <- 1 - 0.1 * 2 = 0.8
        let mut v = [1.0];
        sgd_step(&mut v, &[2.0], 0.1).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_rejects_non_finite() {
        let mut v = [1.0];
        assert!(sgd_step(&mut v, &[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn independent_mode_has_zero_l1_l2() {
        let data = toy_data(6, 3, 4, 1);
        let state = train(&base_config(Mode::Independent, 7), &data, 3, None).unwrap();
        assert!(state.loss_history.iter().all(|r| r.l1 == 0.0 && r.l2 == 0.0));
        assert!(!state.classifier_frozen);
    }

    #[test]
    fn zero_stage2_never_freezes() {
        let data = toy_data(6, 3, 4, 2);
        let bank = old_bank(&data, 50);
        let mut cfg = base_config(Mode::Nccl, 7);
        cfg.epochs_stage2 = 0;
        let state = train(&cfg, &data, 3, Some(&bank)).unwrap();
        assert!(!state.classifier_frozen);
        assert!(state.frozen_fingerprint.is_none());
        assert!(state.loss_history.iter().all(|r| r.l2 == 0.0));
    }

    #[test]
    fn nccl_freezes_classifier_and_it_stays_frozen() {
        let data = toy_data(6, 3, 4, 3);
        let bank = old_bank(&data, 51);
        let state = train(&base_config(Mode::Nccl, 11), &data, 3, Some(&bank)).unwrap();
        assert!(state.classifier_frozen);
        let fp = state.frozen_fingerprint.as_ref().unwrap();
        assert_eq!(fp, &state.classifier.fingerprint());
        // stage 2 epochs actually computed the dual loss
        assert!(state.loss_history.last().unwrap().l2 > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(5, 3, 4, 4);
        let bank = old_bank(&data, 52);
        let a = train(&base_config(Mode::Nccl, 13), &data, 3, Some(&bank)).unwrap();
        let b = train(&base_config(Mode::Nccl, 13), &data, 3, Some(&bank)).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn filtered_entries_never_touched() {
        let data = toy_data(5, 3, 4, 5);
        let bank = old_bank(&data, 53);
        let stats = crate::filter::class_stats(&bank, 3, KernelBandwidth::StdDev).unwrap();
        let (bank, _) = crate::filter::apply_filter(bank, &stats, 0.4).unwrap();
        let state = train(&base_config(Mode::Nccl, 17), &data, 3, Some(&bank)).unwrap();
        assert_eq!(state.non_credible_touches, 0);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let mut data = toy_data(4, 2, 3, 6);
        data[0].label = 9;
        let r = train(&base_config(Mode::Independent, 1), &data, 2, None);
        assert!(matches!(r, Err(CoreError::IndexError(_))));
    }

    #[test]
    fn nccl_without_bank_is_protocol_error() {
        let data = toy_data(4, 2, 3, 6);
        assert!(matches!(
            train(&base_config(Mode::Nccl, 1), &data, 2, None),
            Err(CoreError::Protocol(_))
        ));
    }

    #[test]
    fn independent_equals_plain_ce_reference() {
        // A from-first-principles cross-entropy loop, mirroring the
        // documented rng and reduction contract, must agree bit-for-bit.
        let data = toy_data(5, 3, 4, 7);
        let cfg = base_config(Mode::Independent, 29);
        let state = train(&cfg, &data, 3, None).unwrap();

        let mut rng = SeededRng::new(cfg.seed);
        let mut encoder =
            EncoderParams::init(4, cfg.hidden_dim, cfg.embedding_dim, &mut rng).unwrap();
        let mut classifier = ClassifierParams::init(3, cfg.embedding_dim, &mut rng).unwrap();
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _epoch in 0..cfg.total_epochs() {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size) {
                let mut batch = chunk.to_vec();
                batch.sort_by_key(|&i| data[i].id);
                let mut enc_grads = EncoderGrads::zeros_like(&encoder);
                let mut cls_grads = ClassifierGrads::zeros_like(&classifier);
                for &i in &batch {
                    let e = encode(&encoder, &data[i].x).unwrap();
                    let logits = classify(&classifier, &e).unwrap();
                    let ce = loss_classification(&logits, data[i].label).unwrap();
                    let (cg, ge) = classify_backward(&classifier, &e, &ce.grad_anchor).unwrap();
                    cls_grads.accumulate(&cg, 1.0);
                    let eg = encode_backward(&encoder, &data[i].x, &ge).unwrap();
                    enc_grads.accumulate(&eg, 1.0);
                }
                let lr = cfg.learning_rate / batch.len() as f64;
                sgd_step_encoder(&mut encoder, &enc_grads, lr).unwrap();
                sgd_step_classifier(&mut classifier, &cls_grads, lr).unwrap();
            }
        }
        assert_eq!(state.encoder, encoder);
        assert_eq!(state.classifier, classifier);
    }

    #[test]
    fn train_old_zero_epochs_returns_init() {
        let data = toy_data(4, 2, 3, 8);
        let mut cfg = base_config(Mode::Independent, 31);
        cfg.epochs_stage1 = 0;
        cfg.epochs_stage2 = 0;
        let state = train_old(&cfg, &data, 2).unwrap();
        let mut rng = SeededRng::new(31);
        let enc0 = EncoderParams::init(3, cfg.hidden_dim, cfg.embedding_dim, &mut rng).unwrap();
        let cls0 = ClassifierParams::init(2, cfg.embedding_dim, &mut rng).unwrap();
        assert_eq!(state.encoder, enc0);
        assert_eq!(state.classifier, cls0);
    }

    #[test]
    fn train_old_same_seed_bit_identical() {
        let data = toy_data(4, 2, 3, 9);
        let cfg = base_config(Mode::Independent, 37);
        let a = train_old(&cfg, &data, 2).unwrap();
        let b = train_old(&cfg, &data, 2).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn train_old_rejects_gap_in_labels() {
        let mut data = toy_data(4, 3, 3, 10);
        // drop class 1 entirely
        data.retain(|s| s.label != 1);
        let r = train_old(&base_config(Mode::Independent, 1), &data, 3);
        assert!(matches!(r, Err(CoreError::Protocol(_))));
    }

    #[test]
    fn regression_mode_records_term_under_l1() {
        let data = toy_data(5, 2, 3, 11);
        let bank = old_bank(&data, 54);
        let mut cfg = base_config(Mode::L2Regression, 41);
        cfg.embedding_dim = 4;
        let state = train(&cfg, &data, 2, Some(&bank)).unwrap();
        assert!(state.loss_history.iter().all(|r| r.l2 == 0.0));
        assert!(state.loss_history[0].l1 > 0.0);
        assert!(!state.classifier_frozen);
    }

    #[test]
    fn ce_loss_decreases_on_separable_data() {
        let data = toy_data(8, 3, 4, 12);
        let mut cfg = base_config(Mode::Independent, 43);
        cfg.epochs_stage1 = 30;
        cfg.epochs_stage2 = 0;
        let state = train(&cfg, &data, 3, None).unwrap();
        let first = state.loss_history.first().unwrap().l_new;
        let last = state.loss_history.last().unwrap().l_new;
        assert!(
            last < first * 0.5,
            "cross-entropy failed to drop: {first} -> {last}"
        );
    }

    #[test]
    fn wider_new_embedding_pads_old_bank() {
        // old bank is 4-dim, new model 6-dim: padding path must engage
        let data = toy_data(5, 2, 3, 13);
        let bank = old_bank(&data, 55); // 4-dim old embeddings
        let mut cfg = base_config(Mode::Nccl, 47);
        cfg.embedding_dim = 6;
        let state = train(&cfg, &data, 2, Some(&bank)).unwrap();
        assert_eq!(state.encoder.embedding_dim(), 6);
        assert!(state.loss_history.last().unwrap().l1 > 0.0);
    }

    #[test]
    fn narrower_new_embedding_is_rejected() {
        let data = toy_data(5, 2, 3, 14);
        let bank = old_bank(&data, 56); // 4-dim old embeddings
        let mut cfg = base_config(Mode::Nccl, 47);
        cfg.embedding_dim = 2;
        assert!(matches!(
            train(&cfg, &data, 2, Some(&bank)),
            Err(CoreError::DimensionMismatch(_))
        ));
    }
}
