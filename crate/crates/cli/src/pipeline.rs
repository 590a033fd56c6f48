//! The experiment pipeline: generate or load data, split identities, train
//! the old model, build and filter the bank, train the new model, evaluate
//! self/cross tests and the compatibility criteria, and persist everything.

use std::cell::Cell;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use nccl_core::bank::OldEmbeddingBank;
use nccl_core::data::{generate, id_split, Dataset};
use nccl_core::eval::{
    align_dims, criterion_report, cross_test, embed_samples, self_test, CriterionReport,
};
use nccl_core::filter::{apply_filter, class_stats, FilterReport};
use nccl_core::model::{ClassifierParams, LabeledSample, ModelCheckpoint, Split};
use nccl_core::numeric::SeededRng;
use nccl_core::trainer::{train, train_old, TrainingState};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{load_dataset, write_checkpoint, write_dataset, write_embeddings, EmbeddingLine};
use crate::metrics::{
    EpochRecord, IncompleteDocument, InstrumentationReport, MetricsDocument, Timestamps,
};

/// Wraps the old classifier once old-model training is done; every read
/// afterwards is counted. The new-model path must leave the counter at zero.
pub struct ReadTracked<T> {
    value: T,
    reads: Cell<u64>,
}

impl<T> ReadTracked<T> {
    pub fn new(value: T) -> Self {
        ReadTracked {
            value,
            reads: Cell::new(0),
        }
    }

    pub fn get(&self) -> &T {
        self.reads.set(self.reads.get() + 1);
        &self.value
    }

    pub fn reads(&self) -> u64 {
        self.reads.get()
    }
}

/// Everything a finished run leaves behind.
pub struct PipelineArtifacts {
    pub metrics: MetricsDocument,
    pub metrics_path: PathBuf,
    pub old_checkpoint_path: PathBuf,
    pub new_checkpoint_path: PathBuf,
    pub embeddings_old_path: PathBuf,
    pub embeddings_new_path: PathBuf,
    pub config_path: PathBuf,
    pub dataset: Dataset,
    pub new_state: TrainingState,
    pub filter_report: FilterReport,
}

fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Run the full pipeline for one config. On error the caller is expected to
/// write an incomplete marker via [`write_incomplete`].
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineArtifacts> {
    config.validate()?;
    let started = now_unix_ms();
    let out_dir = config.output_dir.join(&config.run_name);
    std::fs::create_dir_all(&out_dir)?;
    let config_hash = config.hash();

    let config_path = out_dir.join("config.json");
    std::fs::write(&config_path, config.to_canonical_json())?;

    // 1. data
    let dataset = match &config.dataset_path {
        Some(path) => load_dataset(path)?,
        None => generate(&config.data).map_err(CliError::from)?,
    };

    // 2. identity split
    let split = id_split(
        &dataset,
        config.split.old_fraction,
        config.split.overlap,
        config.split.seed,
    )?;

    // 3. old model
    let old_state = train_old(&config.train_old, &split.old.samples, split.old.class_count)?;
    let old_encoder = old_state.encoder.clone();
    let old_checkpoint_path = out_dir.join("old_model.json");
    write_checkpoint(
        &ModelCheckpoint::from_params(
            &old_encoder,
            &old_state.classifier,
            config.train_old.seed,
            &config_hash,
        ),
        &old_checkpoint_path,
    )?;
    let old_loss_history: Vec<EpochRecord> = old_state
        .loss_history
        .iter()
        .zip(old_state.skipped_anchors.iter())
        .map(|(r, &skipped)| EpochRecord {
            l_new: r.l_new,
            l1: r.l1,
            l2: r.l2,
            total: r.total,
            skipped_anchors: skipped,
        })
        .collect();
    // from here on, the old classifier is instrumented; the new-model path
    // never legitimately needs it
    let tracked_old_classifier: ReadTracked<ClassifierParams> =
        ReadTracked::new(old_state.classifier);

    // 4. bank over the new training samples, filtered once
    let bank = OldEmbeddingBank::build(&old_encoder, &split.new.samples)?;
    let stats = class_stats(&bank, split.new.class_count, config.train_new.kernel_bandwidth)?;
    let threshold = config.train_new.u_factor * (split.new.class_count as f64).ln();
    let (bank, filter_report) = apply_filter(bank, &stats, threshold)?;

    // 5. new model
    let new_state = train(
        &config.train_new,
        &split.new.samples,
        split.new.class_count,
        Some(&bank),
    )?;
    let new_checkpoint_path = out_dir.join("new_model.json");
    write_checkpoint(
        &ModelCheckpoint::from_params(
            &new_state.encoder,
            &new_state.classifier,
            config.train_new.seed,
            &config_hash,
        ),
        &new_checkpoint_path,
    )?;

    // 6. retrieval evaluation on the held-out splits (original labels)
    let queries = dataset.split(Split::Query);
    let gallery = dataset.split(Split::Gallery);
    let kind = config.eval.distance;
    let self_test_old = self_test(&old_encoder, &queries, &gallery, kind)?;
    let self_test_new = self_test(&new_state.encoder, &queries, &gallery, kind)?;
    let cross_test_new_old =
        cross_test(&new_state.encoder, &old_encoder, &queries, &gallery, kind)?;

    // 7. embedding dumps over the evaluation samples
    let eval_samples: Vec<&LabeledSample> =
        queries.iter().chain(gallery.iter()).cloned().collect();
    let old_items = embed_samples(&old_encoder, &eval_samples)?;
    let new_items = embed_samples(&new_state.encoder, &eval_samples)?;
    let embeddings_old_path = out_dir.join("embeddings_old.jsonl");
    let embeddings_new_path = out_dir.join("embeddings_new.jsonl");
    write_embeddings(
        &old_items
            .iter()
            .map(|e| EmbeddingLine {
                id: e.id,
                label: e.label,
                v: e.vector.clone(),
            })
            .collect::<Vec<_>>(),
        &embeddings_old_path,
    )?;
    write_embeddings(
        &new_items
            .iter()
            .map(|e| EmbeddingLine {
                id: e.id,
                label: e.label,
                v: e.vector.clone(),
            })
            .collect::<Vec<_>>(),
        &embeddings_new_path,
    )?;

    // 8. compatibility criteria on the same samples, dimensions aligned
    let criterion = criterion_on_items(
        &new_items,
        &old_items,
        config.eval.max_triplets,
        config.eval.criterion_seed,
        kind,
    )?;

    let finished = now_unix_ms();
    let metrics = MetricsDocument {
        run_name: config.run_name.clone(),
        status: "complete".to_string(),
        config_hash,
        seed: config.data.seed,
        timestamps: Timestamps {
            started_unix_ms: started,
            finished_unix_ms: finished,
        },
        filter_report: filter_report.clone(),
        loss_history_old: old_loss_history,
        loss_history_new: new_state
            .loss_history
            .iter()
            .zip(new_state.skipped_anchors.iter())
            .map(|(r, &skipped)| EpochRecord {
                l_new: r.l_new,
                l1: r.l1,
                l2: r.l2,
                total: r.total,
                skipped_anchors: skipped,
            })
            .collect(),
        self_test_old,
        self_test_new,
        cross_test_new_old,
        criterion_report: criterion,
        instrumentation: InstrumentationReport {
            old_classifier_reads: tracked_old_classifier.reads(),
            non_credible_bank_touches: new_state.non_credible_touches,
        },
    };

    let metrics_path = out_dir.join("metrics.json");
    std::fs::write(&metrics_path, metrics.to_json())?;

    Ok(PipelineArtifacts {
        metrics,
        metrics_path,
        old_checkpoint_path,
        new_checkpoint_path,
        embeddings_old_path,
        embeddings_new_path,
        config_path,
        dataset,
        new_state,
        filter_report,
    })
}

/// Criterion rates over paired new/old embeddings of the same samples.
pub fn criterion_on_items(
    new_items: &[nccl_core::eval::EmbeddedItem],
    old_items: &[nccl_core::eval::EmbeddedItem],
    max_triplets: usize,
    seed: u64,
    kind: nccl_core::eval::DistanceKind,
) -> Result<CriterionReport> {
    if new_items.len() != old_items.len() {
        return Err(CliError::Config(
            "criterion: new/old dumps differ in length".into(),
        ));
    }
    let dim = new_items
        .iter()
        .chain(old_items.iter())
        .map(|e| e.vector.len())
        .max()
        .unwrap_or(0);
    let mut new_embs = Vec::with_capacity(new_items.len());
    let mut old_embs = Vec::with_capacity(old_items.len());
    let mut labels = Vec::with_capacity(new_items.len());
    for (n, o) in new_items.iter().zip(old_items.iter()) {
        if n.id != o.id {
            return Err(CliError::Config(format!(
                "criterion: id order mismatch ({} vs {})",
                n.id, o.id
            )));
        }
        if n.label != o.label {
            return Err(CliError::Config(format!(
                "criterion: label mismatch for id {}",
                n.id
            )));
        }
        new_embs.push(align_dims(&n.vector, dim)?);
        old_embs.push(align_dims(&o.vector, dim)?);
        labels.push(n.label);
    }
    let mut rng = SeededRng::new(seed);
    criterion_report(&new_embs, &old_embs, &labels, kind, max_triplets, &mut rng)
        .map_err(CliError::from)
}

/// Best-effort incomplete marker next to where metrics.json would land.
pub fn write_incomplete(config: &RunConfig, error: &CliError) {
    let out_dir = config.output_dir.join(&config.run_name);
    if std::fs::create_dir_all(&out_dir).is_err() {
        return;
    }
    let doc = IncompleteDocument {
        run_name: config.run_name.clone(),
        status: "incomplete".to_string(),
        config_hash: config.hash(),
        error: error.to_string(),
    };
    if let Ok(text) = serde_json::to_string_pretty(&doc) {
        let _ = std::fs::write(out_dir.join("metrics.json"), text);
    }
}

/// Train the old model and report what the credibility filter would remove,
/// without training a new model.
pub fn run_filter_report(config: &RunConfig) -> Result<FilterReport> {
    config.validate()?;
    let dataset = match &config.dataset_path {
        Some(path) => load_dataset(path)?,
        None => generate(&config.data).map_err(CliError::from)?,
    };
    let split = id_split(
        &dataset,
        config.split.old_fraction,
        config.split.overlap,
        config.split.seed,
    )?;
    let old_state = train_old(&config.train_old, &split.old.samples, split.old.class_count)?;
    let bank = OldEmbeddingBank::build(&old_state.encoder, &split.new.samples)?;
    let stats = class_stats(&bank, split.new.class_count, config.train_new.kernel_bandwidth)?;
    let threshold = config.train_new.u_factor * (split.new.class_count as f64).ln();
    let (_, report) = apply_filter(bank, &stats, threshold)?;
    Ok(report)
}

/// Generate a dataset and write it under the output directory.
pub fn run_generate(config: &RunConfig) -> Result<(PathBuf, PathBuf, usize)> {
    config.validate()?;
    let out_dir = config.output_dir.join(&config.run_name);
    std::fs::create_dir_all(&out_dir)?;
    let dataset = generate(&config.data)?;
    let stem = out_dir.join("dataset");
    let (jsonl, header) = write_dataset(&dataset, &stem)?;
    Ok((jsonl, header, dataset.samples.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_tracker_counts() {
        let t = ReadTracked::new(42);
        assert_eq!(t.reads(), 0);
        let _ = t.get();
        let _ = t.get();
        assert_eq!(t.reads(), 2);
    }
}
