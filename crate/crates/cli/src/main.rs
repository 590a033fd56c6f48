use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nccl_cli::config::resolve_config;
use nccl_cli::error::CliError;
use nccl_cli::io::{load_checkpoint, load_dataset, load_embeddings, write_embeddings, EmbeddingLine};
use nccl_cli::pipeline::{criterion_on_items, run_generate, run_pipeline, write_incomplete};
use nccl_cli::sweep::run_sweep;

use nccl_core::eval::{DistanceKind, EmbeddedItem};
use nccl_core::model::{encode, Split};

/// Backward-compatible embedding learning experiments on synthetic data.
#[derive(Parser)]
#[command(name = "nccl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config JSON; the committed reference config is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set train_new.alpha=0.02 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; re-derives every sub-seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write dataset.jsonl plus its header sidecar.
    Generate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Full pipeline: train old, filter bank, train new, evaluate, persist.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// One run per (alpha=beta, u_factor) grid point plus a CSV summary.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated alpha=beta values.
        #[arg(long, value_delimiter = ',', default_value = "0.005,0.01,0.015")]
        alpha_beta: Vec<f64>,
        /// Comma-separated entropy-threshold factors.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,1.0")]
        u_factors: Vec<f64>,
    },
    /// Embed a dataset with a checkpointed encoder and dump JSONL.
    DumpEmbeddings {
        /// Model checkpoint (encoder weights are used).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset JSONL (header sidecar expected next to it).
        #[arg(long)]
        dataset: PathBuf,
        /// Restrict to one split.
        #[arg(long, value_parser = ["train", "query", "gallery", "all"], default_value = "all")]
        split: String,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compatibility-criterion rates over two embedding dumps.
    Criterion {
        /// Dump embedded by the new encoder.
        #[arg(long)]
        new: PathBuf,
        /// Dump embedded by the old encoder (same id order).
        #[arg(long)]
        old: PathBuf,
        /// Sample above this many triplets/pairs.
        #[arg(long, default_value_t = 200_000)]
        max_triplets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the old model, build and filter the bank, report the filter.
    FilterReport {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = resolve_config(
                common.config.as_deref(),
                common.seed,
                &common.set,
                common.out.as_deref(),
            )?;
            let (jsonl, header, count) = run_generate(&cfg)?;
            println!(
                "wrote {count} samples to {} (header {})",
                jsonl.display(),
                header.display()
            );
            Ok(())
        }
        Command::Run { common } => {
            let cfg = resolve_config(
                common.config.as_deref(),
                common.seed,
                &common.set,
                common.out.as_deref(),
            )?;
            match run_pipeline(&cfg) {
                Ok(artifacts) => {
                    let m = &artifacts.metrics;
                    println!(
                        "run {}: self-test old mAP {:.4}, self-test new mAP {:.4}, cross-test mAP {:.4}",
                        m.run_name, m.self_test_old.map, m.self_test_new.map, m.cross_test_new_old.map
                    );
                    println!("metrics: {}", artifacts.metrics_path.display());
                    Ok(())
                }
                Err(err) => {
                    write_incomplete(&cfg, &err);
                    Err(err)
                }
            }
        }
        Command::Sweep {
            common,
            alpha_beta,
            u_factors,
        } => {
            if alpha_beta.is_empty() || u_factors.is_empty() {
                return Err(CliError::Config(
                    "sweep lists must not be empty".to_string(),
                ));
            }
            let cfg = resolve_config(
                common.config.as_deref(),
                common.seed,
                &common.set,
                common.out.as_deref(),
            )?;
            let (rows, summary) = run_sweep(&cfg, &alpha_beta, &u_factors)?;
            let failures = rows.iter().filter(|r| r.status != "complete").count();
            println!(
                "swept {} points ({failures} failed); summary: {}",
                rows.len(),
                summary.display()
            );
            Ok(())
        }
        Command::DumpEmbeddings {
            checkpoint,
            dataset,
            split,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let (encoder, _) = ck.to_params().map_err(|e| CliError::Config(e.to_string()))?;
            let ds = load_dataset(&dataset)?;
            let wanted = match split.as_str() {
                "train" => Some(Split::Train),
                "query" => Some(Split::Query),
                "gallery" => Some(Split::Gallery),
                _ => None,
            };
            let mut lines = Vec::new();
            for s in ds
                .samples
                .iter()
                .filter(|s| wanted.map_or(true, |w| s.split == w))
            {
                let v = encode(&encoder, &s.x).map_err(CliError::from)?;
                lines.push(EmbeddingLine {
                    id: s.id,
                    label: s.label,
                    v,
                });
            }
            write_embeddings(&lines, &out)?;
            println!("wrote {} embeddings to {}", lines.len(), out.display());
            Ok(())
        }
        Command::Criterion {
            new,
            old,
            max_triplets,
            seed,
            out,
        } => {
            let to_items = |lines: Vec<EmbeddingLine>| -> Vec<EmbeddedItem> {
                lines
                    .into_iter()
                    .map(|l| EmbeddedItem {
                        id: l.id,
                        label: l.label,
                        vector: l.v,
                    })
                    .collect()
            };
            let new_items = to_items(load_embeddings(&new)?);
            let old_items = to_items(load_embeddings(&old)?);
            let report = criterion_on_items(
                &new_items,
                &old_items,
                max_triplets,
                seed,
                DistanceKind::Cosine,
            )?;
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::FilterReport { common } => {
            let cfg = resolve_config(
                common.config.as_deref(),
                common.seed,
                &common.set,
                common.out.as_deref(),
            )?;
            let report = nccl_cli::pipeline::run_filter_report(&cfg)?;
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            let out_dir = cfg.output_dir.join(&cfg.run_name);
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("filter_report.json");
            std::fs::write(&path, &text)?;
            println!("{text}");
            println!("written to {}", path.display());
            Ok(())
        }
    }
}
