//! Run configuration: a single JSON document with dotted-path overrides,
//! a master-seed convention, and a content hash for tamper detection.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nccl_core::data::{DataSpec, SplitFractions};
use nccl_core::eval::DistanceKind;
use nccl_core::filter::KernelBandwidth;
use nccl_core::numeric::sub_seed;
use nccl_core::trainer::{Mode, TrainingConfig};

use crate::error::{CliError, Result};

/// Identity-split protocol parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub old_fraction: f64,
    pub overlap: bool,
    pub seed: u64,
}

/// Evaluation options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub distance: DistanceKind,
    /// Criterion triplets/pairs above this count are sampled.
    pub max_triplets: usize,
    pub criterion_seed: u64,
}

/// Everything one experiment needs: data, split, both training configs,
/// evaluation options, and output placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_name: String,
    pub output_dir: PathBuf,
    /// Load this dataset instead of generating one.
    pub dataset_path: Option<PathBuf>,
    pub data: DataSpec,
    pub split: SplitConfig,
    pub train_old: TrainingConfig,
    pub train_new: TrainingConfig,
    pub eval: EvalConfig,
}

// seed-derivation tags, one per consumer of the master seed
const TAG_SPLIT: u64 = 0x53504c49;
const TAG_OLD: u64 = 0x4f4c44;
const TAG_NEW: u64 = 0x4e4557;
const TAG_CRITERION: u64 = 0x43524954;

impl RunConfig {
    /// The committed reference configuration at a given master seed: 12
    /// classes, 2 sub-clusters each, 40 samples per class in 16 dimensions,
    /// 5% planted outliers, a 50% identity overlap split, and the default
    /// hyperparameters (alpha = beta = 0.01, tau = 1, threshold factor 0.5).
    pub fn reference(master_seed: u64) -> Self {
        RunConfig {
            run_name: format!("reference_seed{master_seed}"),
            output_dir: PathBuf::from("runs"),
            dataset_path: None,
            data: DataSpec {
                classes: 12,
                subclusters_per_class: 2,
                samples_per_class: 40,
                input_dim: 16,
                class_spread: 3.0,
                subcluster_spread: 1.0,
                noise_sigma: 0.3,
                outlier_fraction: 0.05,
                split_fractions: SplitFractions {
                    train: 0.6,
                    query: 0.2,
                    gallery: 0.2,
                },
                seed: master_seed,
            },
            split: SplitConfig {
                old_fraction: 0.5,
                overlap: true,
                seed: sub_seed(master_seed, TAG_SPLIT),
            },
            train_old: TrainingConfig {
                mode: Mode::Independent,
                alpha: 0.01,
                beta: 0.01,
                tau: 1.0,
                u_factor: 0.5,
                kernel_bandwidth: KernelBandwidth::MeanSquaredDistance,
                learning_rate: 0.3,
                epochs_stage1: 12,
                epochs_stage2: 0,
                batch_size: 32,
                seed: sub_seed(master_seed, TAG_OLD),
                hidden_dim: 16,
                embedding_dim: 8,
                normalize_embeddings: true,
                negative_cap: None,
            },
            train_new: TrainingConfig {
                mode: Mode::Nccl,
                alpha: 0.01,
                beta: 0.01,
                tau: 1.0,
                u_factor: 0.5,
                kernel_bandwidth: KernelBandwidth::MeanSquaredDistance,
                learning_rate: 0.3,
                epochs_stage1: 500,
                epochs_stage2: 0,
                batch_size: 32,
                seed: sub_seed(master_seed, TAG_NEW),
                hidden_dim: 16,
                embedding_dim: 8,
                normalize_embeddings: true,
                negative_cap: None,
            },
            eval: EvalConfig {
                distance: DistanceKind::Cosine,
                max_triplets: 200_000,
                criterion_seed: sub_seed(master_seed, TAG_CRITERION),
            },
        }
    }

    /// Re-derive every sub-seed from a new master seed.
    pub fn reseed(&mut self, master_seed: u64) {
        self.data.seed = master_seed;
        self.split.seed = sub_seed(master_seed, TAG_SPLIT);
        self.train_old.seed = sub_seed(master_seed, TAG_OLD);
        self.train_new.seed = sub_seed(master_seed, TAG_NEW);
        self.eval.criterion_seed = sub_seed(master_seed, TAG_CRITERION);
    }

    pub fn validate(&self) -> Result<()> {
        self.data
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_old
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_new
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(0.0 < self.split.old_fraction && self.split.old_fraction < 1.0) {
            return Err(CliError::Config(
                "split.old_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.eval.max_triplets == 0 {
            return Err(CliError::Config("eval.max_triplets must be positive".into()));
        }
        if self.run_name.is_empty() {
            return Err(CliError::Config("run_name must not be empty".into()));
        }
        Ok(())
    }

    /// Canonical serialization (field order fixed by the struct layout).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// SHA-256 over the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolve a config from an optional file plus command-line adjustments, in
/// order: file (or the reference default), `--seed` reseeding, `--set`
/// overrides, `--out`.
pub fn resolve_config(
    path: Option<&Path>,
    seed: Option<u64>,
    sets: &[String],
    out: Option<&Path>,
) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| CliError::Config(format!("malformed config JSON: {e}")))?
        }
        None => serde_json::to_value(RunConfig::reference(seed.unwrap_or(1)))
            .expect("reference config serializes"),
    };

    if let Some(master) = seed {
        // reseed through the typed config so the derivation stays in one place
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.reseed(master);
        value = serde_json::to_value(cfg).expect("config serializes");
    }

    for entry in sets {
        apply_set(&mut value, entry)?;
    }

    let mut cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    if let Some(dir) = out {
        cfg.output_dir = dir.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `--set dotted.path=value` override onto the config tree. The
/// value is parsed as JSON when possible and falls back to a string.
fn apply_set(root: &mut serde_json::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{entry}`")))?;
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("--set path `{path}`: `{seg}` is not an object field"))
        })?;
        if i + 1 == segments.len() {
            obj.insert(seg.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}
