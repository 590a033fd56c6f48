//! End-to-end subcommand behavior through the built binary: file formats,
//! determinism, exit codes, and cross-command consistency.

use std::path::Path;
use std::process::{Command, Output};

use nccl_cli::io::load_embeddings;
use nccl_cli::metrics::MetricsDocument;
use nccl_core::model::{encode, ModelCheckpoint};

fn nccl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nccl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// A small fast configuration so the binary tests stay quick.
fn fast_overrides() -> Vec<String> {
    [
        "data.classes=4",
        "data.samples_per_class=20",
        "data.input_dim=6",
        "train_old.epochs_stage1=6",
        "train_old.hidden_dim=8",
        "train_new.epochs_stage1=12",
        "train_new.epochs_stage2=4",
        "train_new.hidden_dim=8",
        "run_name=\"fast\"",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn with_sets(mut base: Vec<&str>, sets: &[String], out: &Path) -> Vec<String> {
    let mut args: Vec<String> = base.drain(..).map(|s| s.to_string()).collect();
    for s in sets {
        args.push("--set".into());
        args.push(s.clone());
    }
    args.push("--out".into());
    args.push(out.display().to_string());
    args
}

fn run_ok(args: Vec<String>) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_nccl"))
        .args(&args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn generate_writes_dataset_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["generate", "--seed", "3"],
        &fast_overrides(),
        dir.path(),
    ));
    let jsonl = dir.path().join("fast/dataset.jsonl");
    let header = dir.path().join("fast/dataset.header.json");
    assert!(jsonl.exists() && header.exists());
    let first = read(&jsonl);
    assert_eq!(first.lines().count(), 4 * 20);

    // regenerate into a second directory: byte-identical files
    let dir2 = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["generate", "--seed", "3"],
        &fast_overrides(),
        dir2.path(),
    ));
    assert_eq!(first, read(&dir2.path().join("fast/dataset.jsonl")));
    assert_eq!(
        read(&header),
        read(&dir2.path().join("fast/dataset.header.json"))
    );
}

#[test]
fn generate_rejects_bad_fractions_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = fast_overrides();
    sets.push("data.split_fractions.train=0.9".into());
    let out = nccl(
        &with_sets(vec!["generate"], &sets, dir.path())
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("split_fractions"), "diagnostic: {stderr}");
}

#[test]
fn unreadable_dataset_path_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = fast_overrides();
    sets.push("dataset_path=\"/nonexistent/data.jsonl\"".into());
    let out = nccl(
        &with_sets(vec!["run"], &sets, dir.path())
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_writes_schema_complete_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["run", "--seed", "5"],
        &fast_overrides(),
        dir.path(),
    ));
    let metrics_path = dir.path().join("fast/metrics.json");
    let doc = MetricsDocument::from_json(&read(&metrics_path)).expect("schema-complete metrics");
    assert_eq!(doc.status, "complete");
    assert!(doc.self_test_old.map > 0.0);
    assert!((0.0..=1.0).contains(&doc.cross_test_new_old.map));
    assert!(!doc.loss_history_old.is_empty());
    assert!(!doc.loss_history_new.is_empty());
    assert_eq!(doc.instrumentation.old_classifier_reads, 0);

    // config hash recomputes from the resolved config on disk
    let config_text = read(&dir.path().join("fast/config.json"));
    let cfg: nccl_cli::config::RunConfig = serde_json::from_str(&config_text).unwrap();
    assert_eq!(cfg.hash(), doc.config_hash);

    for file in ["old_model.json", "new_model.json", "embeddings_old.jsonl", "embeddings_new.jsonl"] {
        assert!(dir.path().join("fast").join(file).exists(), "{file} missing");
    }
}

#[test]
fn rerun_is_byte_identical_modulo_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["run", "--seed", "8"],
        &fast_overrides(),
        dir.path(),
    ));
    let first_metrics = read(&dir.path().join("fast/metrics.json"));
    let first_new = read(&dir.path().join("fast/new_model.json"));
    let first_old = read(&dir.path().join("fast/old_model.json"));

    // identical invocation again, into the same place
    run_ok(with_sets(
        vec!["run", "--seed", "8"],
        &fast_overrides(),
        dir.path(),
    ));
    let a = MetricsDocument::from_json(&first_metrics).unwrap();
    let b = MetricsDocument::from_json(&read(&dir.path().join("fast/metrics.json"))).unwrap();
    assert_eq!(a.comparable_json(), b.comparable_json());
    assert_eq!(first_new, read(&dir.path().join("fast/new_model.json")));
    assert_eq!(first_old, read(&dir.path().join("fast/old_model.json")));
}

#[test]
fn dump_embeddings_matches_direct_encoding() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["generate", "--seed", "4"],
        &fast_overrides(),
        dir.path(),
    ));
    run_ok(with_sets(
        vec!["run", "--seed", "4"],
        &fast_overrides(),
        dir.path(),
    ));
    let dataset = dir.path().join("fast/dataset.jsonl");
    let checkpoint = dir.path().join("fast/new_model.json");
    let out_path = dir.path().join("dump.jsonl");
    run_ok(
        vec![
            "dump-embeddings",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--split",
            "query",
            "--out",
            out_path.to_str().unwrap(),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    );
    let lines = load_embeddings(&out_path).unwrap();
    // 20% of 4*20 samples are queries
    assert_eq!(lines.len(), 16);

    let ck = ModelCheckpoint::from_json(&read(&checkpoint)).unwrap();
    let (encoder, _) = ck.to_params().unwrap();
    let ds = nccl_cli::io::load_dataset(&dataset).unwrap();
    for line in &lines {
        let sample = ds.samples.iter().find(|s| s.id == line.id).unwrap();
        assert_eq!(line.v, encode(&encoder, &sample.x).unwrap());
    }

    // re-dump is byte-identical
    let out2 = dir.path().join("dump2.jsonl");
    run_ok(
        vec![
            "dump-embeddings",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--split",
            "query",
            "--out",
            out2.to_str().unwrap(),
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    );
    assert_eq!(read(&out_path), read(&out2));
}

#[test]
fn criterion_subcommand_reports_rates_from_dumps() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["run", "--seed", "6"],
        &fast_overrides(),
        dir.path(),
    ));
    let out = run_ok(
        vec![
            "criterion",
            "--new",
            dir.path().join("fast/embeddings_new.jsonl").to_str().unwrap(),
            "--old",
            dir.path().join("fast/embeddings_old.jsonl").to_str().unwrap(),
            "--max-triplets",
            "1000000",
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    );
    let report: nccl_core::eval::CriterionReport =
        serde_json::from_slice(&out.stdout).expect("criterion JSON on stdout");
    assert!(report.eq3_rate.is_some());
    assert!(report.eq12_rate.is_some());
    assert!(!report.sampled);

    // agrees with the metrics document produced by the run (same inputs,
    // sampling disabled in both because the instance is small)
    let doc =
        MetricsDocument::from_json(&read(&dir.path().join("fast/metrics.json"))).unwrap();
    assert_eq!(report.eq3_rate, doc.criterion_report.eq3_rate);
    assert_eq!(report.eq12_rate, doc.criterion_report.eq12_rate);
}

#[test]
fn filter_report_subcommand_emits_report() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["filter-report", "--seed", "2"],
        &fast_overrides(),
        dir.path(),
    ));
    let text = read(&dir.path().join("fast/filter_report.json"));
    let report: nccl_core::filter::FilterReport = serde_json::from_str(&text).unwrap();
    assert!(report.threshold > 0.0);
    assert_eq!(report.removed_per_class.len(), 4);
}

#[test]
fn single_point_sweep_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec![
            "sweep",
            "--seed",
            "9",
            "--alpha-beta",
            "0.01",
            "--u-factors",
            "0.5",
        ],
        &fast_overrides(),
        dir.path(),
    ));
    let summary = read(&dir.path().join("fast_sweep_summary.csv"));
    assert_eq!(summary.lines().count(), 2, "header plus one data row");

    let sweep_metrics = MetricsDocument::from_json(&read(
        &dir.path().join("fast_ab0.01_u0.5/metrics.json"),
    ))
    .unwrap();

    let dir2 = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec!["run", "--seed", "9"],
        &fast_overrides(),
        dir2.path(),
    ));
    let direct = MetricsDocument::from_json(&read(&dir2.path().join("fast/metrics.json"))).unwrap();
    assert_eq!(sweep_metrics.self_test_new, direct.self_test_new);
    assert_eq!(sweep_metrics.cross_test_new_old, direct.cross_test_new_old);
    assert_eq!(sweep_metrics.self_test_old, direct.self_test_old);
}

#[test]
fn grid_sweep_writes_one_run_per_point_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(with_sets(
        vec![
            "sweep",
            "--seed",
            "10",
            "--alpha-beta",
            "0.005,0.01,0.015",
            "--u-factors",
            "0.2,0.5,1.0",
        ],
        &fast_overrides(),
        dir.path(),
    ));
    let summary = read(&dir.path().join("fast_sweep_summary.csv"));
    assert_eq!(summary.lines().count(), 10, "header plus nine data rows");
    let mut found = 0;
    for ab in ["0.005", "0.01", "0.015"] {
        for u in ["0.2", "0.5", "1"] {
            let path = dir.path().join(format!("fast_ab{ab}_u{u}/metrics.json"));
            if path.exists() {
                found += 1;
            }
        }
    }
    assert_eq!(found, 9, "nine metrics files expected");
}
