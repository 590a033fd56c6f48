//! Desk-scale laboratory for backward-compatible embedding learning.
//!
//! A "new" encoder is trained so that its embeddings can be compared
//! directly against a gallery indexed by a frozen "old" encoder, without
//! re-extracting the gallery. The method combines a classification loss
//! with a neighborhood-consensus weighted contrastive loss against a frozen
//! bank of old embeddings, a dual contrastive loss on classifier logits in
//! a second stage with the head frozen, and an entropy-based credibility
//! filter that drops unreliable old embeddings before training.
//!
//! Modules:
//! - [`numeric`]: dense vector/matrix ops, stable softmax, seeded RNG, and
//!   the finite-difference gradient oracle.
//! - [`model`]: the two-layer tanh encoder, classifier head, and analytic
//!   backward passes.
//! - [`losses`]: all loss terms with gradients at their anchor inputs.
//! - [`bank`]: the frozen old-embedding store and discriminative bank.
//! - [`filter`]: credible-sample detection (Gaussian-kernel assignments,
//!   entropy threshold).
//! - [`trainer`]: the two-stage training loop and baselines.
//! - [`eval`]: mAP/CMC retrieval metrics, self/cross tests, compatibility
//!   criteria.
//! - [`data`]: synthetic clustered datasets with planted outliers and the
//!   old/new identity split.

pub mod bank;
pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod trainer;

pub use bank::{DiscriminativeBank, OldEmbeddingBank};
pub use data::{generate, id_split, DataSpec, Dataset, IdSplit, SplitFractions, SubsetData};
pub use error::{CoreError, Result};
pub use eval::{
    align_dims, criterion_report, cross_test, evaluate, self_test, CriterionReport, DistanceKind,
    EmbeddedItem, RetrievalMetrics, RetrievalTask,
};
pub use filter::{apply_filter, class_stats, entropy, pseudo_assignment, FilterReport};
pub use losses::{
    affinity_scores, consensus_weight, loss_classification, loss_l1, loss_l2_discriminative,
    loss_l2_regression, loss_total, LossWithGrad,
};
pub use model::{
    classify, encode, ClassifierParams, EncoderParams, FrozenClassifier, LabeledSample,
    ModelCheckpoint, Split,
};
pub use numeric::{dot, finite_diff_grad, l2_normalize, softmax, Matrix, SeededRng};
pub use trainer::{sgd_step, train, train_old, LossRecord, Mode, TrainingConfig, TrainingState};
