//! On-disk formats: dataset JSONL with a sidecar header, embedding dumps,
//! and model checkpoints.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use nccl_core::data::{DataSpec, Dataset};
use nccl_core::model::{LabeledSample, ModelCheckpoint, Split};

use crate::error::{CliError, Result};

/// One dataset line: the sample plus its planted-outlier flag.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetLine {
    id: u64,
    label: usize,
    split: Split,
    outlier: bool,
    x: Vec<f64>,
}

/// Sidecar header: the generator spec and its seed.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    spec: DataSpec,
    seed: u64,
}

/// One embedding-dump line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingLine {
    pub id: u64,
    pub label: usize,
    pub v: Vec<f64>,
}

/// Write `<stem>.jsonl` and the `<stem>.header.json` sidecar.
pub fn write_dataset(dataset: &Dataset, stem: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let jsonl_path = stem.with_extension("jsonl");
    let header_path = stem.with_extension("header.json");
    let mut out = Vec::new();
    for s in &dataset.samples {
        let line = DatasetLine {
            id: s.id,
            label: s.label,
            split: s.split,
            outlier: dataset.planted_outlier_ids.contains(&s.id),
            x: s.x.clone(),
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| CliError::Internal(format!("dataset line serialization: {e}")))?;
        out.push(b'\n');
    }
    std::fs::write(&jsonl_path, out)?;
    let header = DatasetHeader {
        spec: dataset.spec.clone(),
        seed: dataset.spec.seed,
    };
    let header_text = serde_json::to_string_pretty(&header)
        .map_err(|e| CliError::Internal(format!("header serialization: {e}")))?;
    std::fs::write(&header_path, header_text)?;
    Ok((jsonl_path, header_path))
}

/// Load a dataset from its JSONL file; the sidecar header must sit next to
/// it under the `.header.json` extension.
pub fn load_dataset(jsonl_path: &Path) -> Result<Dataset> {
    let header_path = jsonl_path.with_extension("header.json");
    let header_text = std::fs::read_to_string(&header_path).map_err(|e| {
        CliError::Io(format!(
            "cannot read dataset header {}: {e}",
            header_path.display()
        ))
    })?;
    let header: DatasetHeader = serde_json::from_str(&header_text)
        .map_err(|e| CliError::Config(format!("malformed dataset header: {e}")))?;

    let file = std::fs::File::open(jsonl_path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", jsonl_path.display())))?;
    let mut samples = Vec::new();
    let mut planted_outlier_ids = BTreeSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| {
            CliError::Config(format!("malformed dataset line {}: {e}", lineno + 1))
        })?;
        if parsed.outlier {
            planted_outlier_ids.insert(parsed.id);
        }
        samples.push(LabeledSample {
            id: parsed.id,
            label: parsed.label,
            split: parsed.split,
            x: parsed.x,
        });
    }
    if samples.is_empty() {
        return Err(CliError::Config(format!(
            "dataset {} holds no samples",
            jsonl_path.display()
        )));
    }
    Ok(Dataset {
        samples,
        spec: header.spec,
        planted_outlier_ids,
    })
}

/// Write one embedding line per item.
pub fn write_embeddings(lines: &[EmbeddingLine], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for line in lines {
        serde_json::to_writer(&mut out, line)
            .map_err(|e| CliError::Internal(format!("embedding serialization: {e}")))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingLine>> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EmbeddingLine = serde_json::from_str(&line).map_err(|e| {
            CliError::Config(format!("malformed embedding line {}: {e}", lineno + 1))
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn write_checkpoint(checkpoint: &ModelCheckpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    ModelCheckpoint::from_json(&text).map_err(|e| CliError::Config(e.to_string()))
}
